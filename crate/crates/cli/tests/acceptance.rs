//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the report is always printed.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{interval_iou, map_oracle, match_oracle, nms_oracle, random_pair, rng, voc07_oracle, voc12_oracle};
use obbdet::checks::{fusion_gradcheck, loss_gradcheck};
use obbdet::eval::{evaluate_dataset, ImageEval};
use obbdet::fusion::{cim, Tensor};
use obbdet::geometry::{mc_iou_oracle, point_in_box, rotated_giou, rotated_iou};
use obbdet::losses::arl;
use obbdet::postproc::{horizontal_nms, rotated_nms};
use obbdet::scene::{gen_scene_set, nms_ablation, SceneConfig};
use obbdet::{assignment_oracle, atss_assign, generate_anchor_points, Detection, EvalConfig, GroundTruth, LossParams, OrientedBox};
use rand::Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn geometry_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2024);
    let pairs: Vec<(OrientedBox, OrientedBox)> = (0..200).map(|_| random_pair(&mut r)).collect();
    let worst_mc = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (a, b))| (rotated_iou(a, b).unwrap() - mc_iou_oracle(a, b, 4_000_000, i as u64).unwrap()).abs())
        .reduce(|| 0.0, f64::max);
    let mut worst_aa = 0.0f64;
    for _ in 0..1000 {
        let mut rect = || {
            let (x, y) = (r.random_range(0.0..20.0), r.random_range(0.0..20.0));
            [x, x + r.random_range(0.5..10.0), y, y + r.random_range(0.5..10.0)]
        };
        let (p, q) = (rect(), rect());
        let to_box = |v: [f64; 4]| OrientedBox::from_xyxy(v[0], v[2], v[1], v[3]).unwrap();
        worst_aa = worst_aa.max((rotated_iou(&to_box(p), &to_box(q)).unwrap() - interval_iou(p, q)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst_mc <= 0.005 && worst_aa <= 1e-9 && secs < 120.0,
        format!("max |IoU - MC| = {worst_mc:.5} over 200 pairs, max axis-aligned error {worst_aa:.1e}, {secs:.1} s"),
    )
}

fn crossed_squares() -> Outcome {
    let a = OrientedBox::new(0., 0., 2., 2., 0.).unwrap();
    let b = OrientedBox::new(0., 0., 2., 2., std::f64::consts::FRAC_PI_4).unwrap();
    let err = (rotated_iou(&a, &b).unwrap() - 0.5f64.sqrt()).abs();
    ensure(err <= 1e-9, format!("|IoU - 1/sqrt 2| = {err:.1e}"))
}

fn giou_bounds() -> Outcome {
    let mut r = rng(7);
    let mut bad = 0;
    for _ in 0..10_000 {
        let (a, b) = random_pair(&mut r);
        let (i, g) = (rotated_iou(&a, &b).unwrap(), rotated_giou(&a, &b).unwrap());
        if !(g <= i && g > -1.0 && g <= 1.0) {
            bad += 1;
        }
    }
    let mut worst = 0.0f64;
    let mut n = 0;
    while n < 1000 {
        let outer = OrientedBox::new(0., 0., r.random_range(10.0..30.0), r.random_range(10.0..30.0), r.random_range(-3.0..3.0)).unwrap();
        let inner = OrientedBox::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(0.5..4.0), r.random_range(0.5..4.0), r.random_range(-3.0..3.0)).unwrap();
        if inner.corners().unwrap().iter().all(|&p| point_in_box(p, &outer).unwrap()) {
            worst = worst.max((rotated_giou(&inner, &outer).unwrap() - rotated_iou(&inner, &outer).unwrap()).abs());
            n += 1;
        }
    }
    ensure(bad == 0 && worst <= 1e-12, format!("{bad} violations in 10^4 pairs, contained max |GIoU - IoU| = {worst:.1e}"))
}

fn loss_gradients() -> Outcome {
    let rep = loss_gradcheck(1000, 3).map_err(|e| e.to_string())?;
    // Independent pass at the recognition-loss defaults.
    let p = LossParams::arl();
    let mut r = rng(8);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (x, t) = (r.random_range(0.02..0.98), r.random_range(0.02..0.98));
        let v = arl(x, 1, t, &p).unwrap();
        let np = common::central(|q| arl(q, 1, t, &p).unwrap().loss, x, 1e-6);
        let nt = common::central(|q| arl(x, 1, q, &p).unwrap().loss, t, 1e-6);
        worst = worst.max(common::rel(v.d_p, np, 1e-4)).max(common::rel(v.d_t, nt, 1e-4));
    }
    ensure(
        rep.pass && worst <= 1e-6,
        format!(
            "focal d/dp {:.1e}, ARL d/dp {:.1e}, d/dt {:.1e}; defaults-only {worst:.1e}",
            rep.focal_d_p, rep.arl_d_p, rep.arl_d_t
        ),
    )
}

fn arl_spot() -> Outcome {
    let got = arl(0.5, 1, 0.72, &LossParams::arl()).unwrap().loss;
    let expect = common::arl_positive_reference(0.5, 0.72, 2.5);
    let closed = 0.72 * 1.8f64.exp() * 2f64.ln();
    let err = (got - expect).abs().max((got - closed).abs());
    ensure(err <= 1e-9, format!("arl = {got:.9}, error {err:.1e}"))
}

fn fusion_backward() -> Outcome {
    let rep = fusion_gradcheck(20, 5).map_err(|e| e.to_string())?;
    ensure(
        rep.pass,
        format!("max rel. error {:.1e} over 20 shapes, zero layer-scale identity {}", rep.max_error(), rep.ssa_zero_scale_identity),
    )
}

fn cim_permutation() -> Outcome {
    for s in 0..100 {
        let mut r = rng(s);
        let c = 2 * r.random_range(1..=4);
        let (h, w) = (2 * r.random_range(1..=3), 2 * r.random_range(1..=3));
        let low = Tensor::random(c, h, w, &mut r);
        let high = Tensor::random(c, h / 2, w / 2, &mut r);
        let (xl, xh) = cim(&low, &high).map_err(|e| e.to_string())?;
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let up = high.at(ch, y / 2, x / 2);
                    let own = low.at(ch, y, x);
                    let (el, eh) = if ch < c / 2 { (own, up) } else { (up, own) };
                    if xl.at(ch, y, x) != el || xh.at(ch, y, x) != eh {
                        return Err(format!("input {s} channel {ch}"));
                    }
                }
            }
        }
    }
    Ok("100 inputs".into())
}

fn atss_oracle() -> Outcome {
    let mut anchors = 0;
    for s in 0..100u64 {
        let mut r = rng(300 + s);
        let (w, h) = (r.random_range(200..520u32), r.random_range(200..520u32));
        let gts: Vec<OrientedBox> = (0..r.random_range(1..=20))
            .map(|_| OrientedBox::new(r.random_range(0.0..w as f64), r.random_range(0.0..h as f64), r.random_range(6.0..220.0), r.random_range(6.0..120.0), r.random_range(-3.2..3.2)).unwrap())
            .collect();
        let grids = generate_anchor_points(w, h, &[3, 4, 5, 6, 7]).unwrap();
        let a = atss_assign(&grids, &gts, 9).unwrap();
        if a != assignment_oracle(&grids, &gts, 9).unwrap() {
            return Err(format!("scene {s} differs"));
        }
        anchors += a.labels.len();
    }
    Ok(format!("100 scenes, {anchors} anchors"))
}

fn nms_checks() -> Outcome {
    for s in 0..100u64 {
        let mut r = rng(700 + s);
        let dets: Vec<Detection> = (0..200)
            .map(|_| {
                let b = OrientedBox::new(r.random_range(0.0..150.0), r.random_range(0.0..150.0), r.random_range(15.0..40.0), r.random_range(6.0..20.0), r.random_range(-1.6..1.6)).unwrap();
                Detection::new(b, (r.random_range(0.0..1.0f64) * 20.0).round() / 20.0, None)
            })
            .collect();
        let kept = rotated_nms(&dets, 0.5).unwrap();
        if kept != nms_oracle(&dets, 0.5) {
            return Err(format!("set {s} differs from oracle"));
        }
        let sub: Vec<Detection> = kept.iter().map(|&i| dets[i]).collect();
        if rotated_nms(&sub, 0.5).unwrap().len() != sub.len() {
            return Err(format!("set {s} not idempotent"));
        }
    }
    let t = std::f64::consts::FRAC_PI_4;
    let thin = [
        Detection::new(OrientedBox::new(0., 0., 100., 4., t).unwrap(), 0.9, None),
        Detection::new(OrientedBox::new(4., -4., 100., 4., t).unwrap(), 0.8, None),
    ];
    let (rk, hk) = (rotated_nms(&thin, 0.7).unwrap(), horizontal_nms(&thin, 0.7).unwrap());
    ensure(rk == vec![0, 1] && hk == vec![0], format!("100 sets match and are idempotent; thin boxes kept rotated {rk:?} horizontal {hk:?}"))
}

fn evaluation() -> Outcome {
    let sq = |x: f64| OrientedBox::new(x, 0., 10., 10., 0.).unwrap();
    let gts = vec![GroundTruth::new(sq(0.), 0)];
    let dets = vec![Detection::new(sq(100.), 0.9, Some(0)), Detection::new(sq(0.), 0.8, Some(0))];
    let rep = evaluate_dataset(&[ImageEval { dets: dets.clone(), gts: gts.clone() }], &EvalConfig::new(1)).unwrap();
    let data = vec![(dets, gts)];
    let o = match_oracle(&data, 1, 0.5);
    let fixture = rep.map_voc07 == 0.5 && rep.map_voc12 == 0.5 && map_oracle(&o, voc07_oracle) == 0.5 && map_oracle(&o, voc12_oracle) == 0.5;

    let cfg = SceneConfig { sigma_loc: 0.0, sigma_theta: 0.0, confusion_rate: 0.0, fp_rate: 0.0, ..SceneConfig::default() };
    let set = gen_scene_set(&cfg).unwrap();
    let images: Vec<ImageEval> = set
        .images
        .iter()
        .map(|i| ImageEval { dets: i.predictions.iter().map(|p| p.det).collect(), gts: i.gts.clone() })
        .collect();
    let z = evaluate_dataset(&images, &EvalConfig::new(12)).unwrap();
    ensure(
        fixture && z.map_voc07 == 1.0 && z.map_voc12 == 1.0,
        format!("[FP, TP] -> VOC07 {} VOC12 {}; zero-noise mAP {} / {}", rep.map_voc07, rep.map_voc12, z.map_voc07, z.map_voc12),
    )
}

fn ablation_trend() -> Outcome {
    let t = nms_ablation(&SceneConfig::ablation(), &[300, 500, 1000], 0.8).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    let mut ok = true;
    for row in &t.rows {
        ok &= row.without_nms.ar > row.with_nms.ar && row.without_nms.r75 > row.with_nms.r75;
        detail.push(format!(
            "@{} AR {:.3}>{:.3} R75 {:.3}>{:.3}",
            row.budget, row.without_nms.ar, row.with_nms.ar, row.without_nms.r75, row.with_nms.r75
        ));
    }
    ensure(ok, detail.join(", "))
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_obbdet"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "gts", "dets", "proposals"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = std::fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
        names.sort();
        for p in names {
            out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), std::fs::read(&p).unwrap()));
        }
    }
    out
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (sa, sb) = (a.to_str().unwrap(), b.to_str().unwrap());
    let gen_a = run_cli(&["gen", "-o", sa, "--seed", "17"])?;
    let gen_b = run_cli(&["gen", "-o", sb, "--seed", "17"])?;
    if gen_a != gen_b || read_tree(&a) != read_tree(&b) {
        return Err("gen output differs".into());
    }
    let dets = a.join("dets/img_0000.txt");
    let gts = a.join("gts/img_0000.txt");
    let (dets, gts) = (dets.to_str().unwrap(), gts.to_str().unwrap());
    let (dd, gd) = (a.join("dets"), a.join("gts"));
    let runs: Vec<Vec<&str>> = vec![
        vec!["iou", "0,0,2,2,0", "0.5,0.2,2,1,-0.4"],
        vec!["nms", dets, "--mode", "rotated"],
        vec!["nms", dets, "--mode", "horizontal"],
        vec!["assign", gts, "--width", "1024", "--height", "1024"],
        vec!["losscheck", "--seed", "3"],
        vec!["fusioncheck", "--seed", "3", "--shapes", "4"],
        vec!["eval", "--dets", dd.to_str().unwrap(), "--gts", gd.to_str().unwrap(), "--metric", "voc07"],
        vec!["eval", "--dets", dd.to_str().unwrap(), "--gts", gd.to_str().unwrap(), "--metric", "voc12"],
        vec!["ablate-nms", "--seed", "4"],
    ];
    for args in &runs {
        let (x, y) = (run_cli(args)?, run_cli(args)?);
        if x != y || x.is_empty() {
            return Err(format!("{args:?} differs between runs"));
        }
    }
    let same = run_cli(&["iou", "1,2,3,4,0.3", "1,2,3,4,0.3"])?;
    ensure(
        same == b"{\"iou\":1.0,\"giou\":1.0}\n",
        format!("gen + {} subcommand runs byte-identical", runs.len()),
    )
}

fn main() {
    let start = Instant::now();
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("geometry oracle suite", geometry_oracle),
        ("crossed squares IoU = 1/sqrt 2", crossed_squares),
        ("GIoU bounds and containment", giou_bounds),
        ("loss gradient checks", loss_gradients),
        ("ARL spot value", arl_spot),
        ("fusion backward checks", fusion_backward),
        ("CIM permutation", cim_permutation),
        ("ATSS equals brute-force oracle", atss_oracle),
        ("NMS oracle, idempotence, thin boxes", nms_checks),
        ("evaluation fixtures and zero-noise mAP", evaluation),
        ("proposal NMS ablation trend", ablation_trend),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let t = Instant::now();
        let res = check();
        let secs = t.elapsed().as_secs_f64();
        match &res {
            Ok(d) => println!("PASS  {name}: {d} ({secs:.1} s)"),
            Err(d) => {
                println!("FAIL  {name}: {d} ({secs:.1} s)");
                failed.push(name);
            }
        }
    }
    println!("acceptance total {:.1} s", start.elapsed().as_secs_f64());
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
