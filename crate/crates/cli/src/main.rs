use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use obbdet::checks::{fusion_gradcheck, loss_gradcheck};
use obbdet::coding::{stride_of, DEFAULT_TOPK};
use obbdet::dota::{format_detections, parse_dota, parse_dota_detections, DetectionRecord};
use obbdet::eval::{evaluate_dataset, ImageEval};
use obbdet::geometry::{rotated_giou, rotated_iou};
use obbdet::postproc::{horizontal_nms, multiclass_nms, rotated_nms, NmsMode, PROPOSAL_NMS_IOU};
use obbdet::scene::{gen_scene_set, nms_ablation, write_scene_set, AblationTable};
use obbdet::{
    atss_assign, generate_anchor_points, Detection, Error, EvalConfig, GroundTruth, Metric, OrientedBox, Result,
    SceneConfig,
};

#[derive(Parser)]
#[command(name = "obbdet", version, about = "Oriented box detection toolkit")]
struct Cli {
    /// Seed for every random draw; overrides the seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// IoU and GIoU of two boxes given as `cx,cy,w,h,theta`.
    Iou {
        #[arg(allow_hyphen_values = true)]
        a: String,
        #[arg(allow_hyphen_values = true)]
        b: String,
    },
    /// Non-maximum suppression over a DOTA detection file.
    Nms {
        dets: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::Rotated)]
        mode: ModeArg,
        /// Suppress across classes.
        #[arg(long)]
        class_agnostic: bool,
        /// Write kept detections here instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// ATSS assignment statistics for the ground truths of one image.
    Assign {
        gts: PathBuf,
        #[arg(long)]
        width: u32,
        #[arg(long)]
        height: u32,
        #[arg(long, default_value_t = DEFAULT_TOPK)]
        topk: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [3u32, 4, 5, 6, 7])]
        levels: Vec<u32>,
    },
    /// Analytic loss gradients against central differences.
    Losscheck {
        #[arg(long, default_value_t = 1000)]
        configs: usize,
    },
    /// Fusion and attention backward passes against finite differences.
    Fusioncheck {
        #[arg(long, default_value_t = 20)]
        shapes: usize,
    },
    /// Generate a synthetic scene set as DOTA files.
    Gen {
        /// Scene config JSON; defaults apply to missing fields.
        config: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Evaluate a detection directory against a ground-truth directory.
    Eval {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long, value_enum, default_value_t = MetricArg::Voc12)]
        metric: MetricArg,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Class order; defaults to the sorted names found in both directories.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
    },
    /// Proposal recall with and without NMS on a generated scene set.
    AblateNms {
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [300usize, 500, 1000])]
        budgets: Vec<usize>,
        #[arg(long, default_value_t = PROPOSAL_NMS_IOU)]
        nms_iou: f64,
        /// Print a text table instead of JSON.
        #[arg(long)]
        table: bool,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Rotated,
    Horizontal,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MetricArg {
    Voc07,
    Voc12,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn parse_box(s: &str) -> Result<OrientedBox> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidInput(format!("box `{s}`: {e}")))?;
    match v[..] {
        [cx, cy, w, h, t] => OrientedBox::new(cx, cy, w, h, t),
        _ => Err(Error::InvalidInput(format!("box `{s}` needs 5 comma-separated numbers"))),
    }
}

fn load_config(path: Option<&Path>, fallback: SceneConfig, seed: Option<u64>) -> Result<SceneConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text)?
        }
        None => fallback,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// `*.txt` files in `dir`, sorted by name.
fn txt_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let p = entry.map_err(|e| io_err(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "txt") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Serialize)]
struct IouOut {
    iou: f64,
    giou: f64,
}

#[derive(Serialize)]
struct LevelStats {
    level: u32,
    stride: f64,
    anchors: usize,
    positives: usize,
}

#[derive(Serialize)]
struct AssignOut {
    num_gts: usize,
    topk: usize,
    total_anchors: usize,
    num_positive: usize,
    levels: Vec<LevelStats>,
    positives_per_gt: Vec<usize>,
    mean_positive_iou: f64,
}

#[derive(Serialize)]
struct GenOut {
    images: usize,
    objects: usize,
    predictions: usize,
    proposals: usize,
    class_names: Vec<String>,
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn ablation_text(t: &AblationTable) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "proposal NMS IoU {}  images {}  objects {}", t.nms_iou, t.num_images, t.num_gts);
    let _ = writeln!(s, "{:<8} {:>7} {:>7} {:>7} {:>7} {:>7}", "budget", "mode", "R50", "R75", "R85", "AR");
    for r in &t.rows {
        for (mode, v) in [("nms", &r.with_nms), ("no-nms", &r.without_nms)] {
            let _ = writeln!(
                s,
                "{:<8} {:>7} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
                r.budget, mode, v.r50, v.r75, v.r85, v.ar
            );
        }
    }
    s
}

fn run(cli: Cli) -> Result<bool> {
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Iou { a, b } => {
            let (a, b) = (parse_box(&a)?, parse_box(&b)?);
            let out = IouOut {
                iou: rotated_iou(&a, &b)?,
                giou: rotated_giou(&a, &b)?,
            };
            print!("{}", serde_json::to_string(&out)? + "\n");
        }
        Cmd::Nms {
            dets,
            iou,
            mode,
            class_agnostic,
            out,
        } => {
            let recs = parse_dota_detections(&dets)?;
            let mut names: Vec<&str> = Vec::new();
            let ds: Vec<Detection> = recs
                .iter()
                .map(|r| {
                    let label = names.iter().position(|n| *n == r.class).unwrap_or_else(|| {
                        names.push(&r.class);
                        names.len() - 1
                    });
                    Detection::new(r.bbox, r.score, Some(label))
                })
                .collect();
            let kept = match (class_agnostic, mode) {
                (true, ModeArg::Rotated) => rotated_nms(&ds, iou)?,
                (true, ModeArg::Horizontal) => horizontal_nms(&ds, iou)?,
                (false, ModeArg::Rotated) => multiclass_nms(&ds, iou, NmsMode::Rotated)?,
                (false, ModeArg::Horizontal) => multiclass_nms(&ds, iou, NmsMode::Horizontal)?,
            };
            let kept: Vec<DetectionRecord> = kept.into_iter().map(|i| recs[i].clone()).collect();
            emit(&format_detections(&kept)?, out.as_deref())?;
        }
        Cmd::Assign {
            gts,
            width,
            height,
            topk,
            levels,
        } => {
            let boxes: Vec<OrientedBox> = parse_dota(&gts)?.into_iter().map(|a| a.bbox).collect();
            let grids = generate_anchor_points(width, height, &levels)?;
            let res = atss_assign(&grids, &boxes, topk)?;
            let mut start = 0;
            let per_level = grids
                .iter()
                .map(|g| {
                    let slice = &res.labels[start..start + g.len()];
                    start += g.len();
                    LevelStats {
                        level: g.level,
                        stride: stride_of(g.level),
                        anchors: g.len(),
                        positives: slice.iter().filter(|a| a.gt().is_some()).count(),
                    }
                })
                .collect();
            let pos_ious: Vec<f64> = res
                .labels
                .iter()
                .zip(&res.ious)
                .filter(|(a, _)| a.gt().is_some())
                .map(|(_, &v)| v)
                .collect();
            let out = AssignOut {
                num_gts: boxes.len(),
                topk,
                total_anchors: res.labels.len(),
                num_positive: res.num_positive(),
                levels: per_level,
                positives_per_gt: res.positives_per_gt(boxes.len()),
                mean_positive_iou: if pos_ious.is_empty() {
                    0.0
                } else {
                    pos_ious.iter().sum::<f64>() / pos_ious.len() as f64
                },
            };
            print!("{}", json(&out)?);
        }
        Cmd::Losscheck { configs } => {
            let r = loss_gradcheck(configs, seed.unwrap_or(0))?;
            print!("{}", json(&r)?);
            return Ok(r.pass);
        }
        Cmd::Fusioncheck { shapes } => {
            let r = fusion_gradcheck(shapes, seed.unwrap_or(0))?;
            print!("{}", json(&r)?);
            return Ok(r.pass);
        }
        Cmd::Gen { config, out } => {
            let cfg = load_config(config.as_deref(), SceneConfig::default(), seed)?;
            let set = gen_scene_set(&cfg)?;
            write_scene_set(&set, &out)?;
            let cfg_path = out.join("config.json");
            std::fs::write(&cfg_path, json(&cfg)?).map_err(|e| io_err(&cfg_path, e))?;
            let summary = GenOut {
                images: set.images.len(),
                objects: set.images.iter().map(|i| i.gts.len()).sum(),
                predictions: set.images.iter().map(|i| i.predictions.len()).sum(),
                proposals: set.images.iter().map(|i| i.proposals.len()).sum(),
                class_names: set.class_names,
            };
            print!("{}", json(&summary)?);
        }
        Cmd::Eval {
            dets,
            gts,
            metric,
            iou,
            classes,
        } => {
            let mut images = Vec::new();
            for gt_path in txt_files(&gts)? {
                let anns = parse_dota(&gt_path)?;
                let det_path = dets.join(gt_path.file_name().expect("listed file"));
                let recs = if det_path.exists() {
                    parse_dota_detections(&det_path)?
                } else {
                    Vec::new()
                };
                images.push((anns, recs));
            }
            let names: Vec<String> = match classes {
                Some(c) => c,
                None => {
                    let mut set = BTreeSet::new();
                    for (anns, recs) in &images {
                        set.extend(anns.iter().map(|a| a.class.clone()));
                        set.extend(recs.iter().map(|r| r.class.clone()));
                    }
                    set.into_iter().collect()
                }
            };
            let index = |n: &str| {
                names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::InvalidInput(format!("class `{n}` not in the class list")))
            };
            let mut evals = Vec::with_capacity(images.len());
            for (anns, recs) in &images {
                let gts = anns
                    .iter()
                    .map(|a| {
                        Ok(GroundTruth {
                            difficult: a.difficult,
                            ..GroundTruth::new(a.bbox, index(&a.class)?)
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let dets = recs
                    .iter()
                    .map(|r| Ok(Detection::new(r.bbox, r.score, Some(index(&r.class)?))))
                    .collect::<Result<Vec<_>>>()?;
                evals.push(ImageEval { dets, gts });
            }
            let mut cfg = EvalConfig::new(names.len());
            cfg.class_names = names;
            cfg.iou_thr = iou;
            cfg.metric = match metric {
                MetricArg::Voc07 => Metric::Voc07,
                MetricArg::Voc12 => Metric::Voc12,
            };
            print!("{}", evaluate_dataset(&evals, &cfg)?.to_json()?);
        }
        Cmd::AblateNms {
            config,
            budgets,
            nms_iou,
            table,
        } => {
            let cfg = load_config(config.as_deref(), SceneConfig::ablation(), seed)?;
            let t = nms_ablation(&cfg, &budgets, nms_iou)?;
            if table {
                print!("{}", ablation_text(&t));
            } else {
                print!("{}", json(&t)?);
            }
        }
    }
    Ok(true)
}
