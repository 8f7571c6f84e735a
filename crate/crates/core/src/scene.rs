//! Seeded synthetic scenes: packed ground truths, perturbed predictions and
//! class-agnostic proposals whose localization quality is known exactly.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dota::{format_annotations, format_detections, Annotation, DetectionRecord};
use crate::error::{Error, Result};
use crate::eval::{average_recall, GroundTruth, ProposalImage, RecallRow};
use crate::geometry::{aabb_of, rotated_iou, OrientedBox};
use crate::postproc::{select_proposals, Detection, PROPOSAL_NMS_IOU};

/// Floor for generated scores, keeping every prediction above typical
/// score filters.
const MIN_SCORE: f64 = 1e-3;
const SCORE_NOISE: f64 = 0.05;
const MIN_PACK_IOU: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarseClass {
    pub name: String,
    pub fine: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreModel {
    /// score = clip(q + N(0, 0.05)).
    Correlated,
    /// Worse-localized duplicates receive higher scores.
    AntiCorrelated,
}

/// Class-agnostic proposals. Each object gets a chain of `per_object` boxes
/// slid along its long axis by `r0 + j * drift_step` of the box width, with
/// `r0 ~ U(0, max_initial_drift)` and one random direction per object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposalConfig {
    pub per_object: usize,
    pub drift_step: f64,
    pub max_initial_drift: f64,
    /// Random boxes per image with scores in `[0, background_score_max)`.
    pub background: usize,
    pub background_score_max: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            per_object: 8,
            drift_step: 0.03,
            max_initial_drift: 0.15,
            background: 800,
            background_score_max: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub image_width: u32,
    pub image_height: u32,
    pub num_images: usize,
    pub taxonomy: Vec<CoarseClass>,
    /// Inclusive object count range per image.
    pub objects: [usize; 2],
    /// Long side range in pixels.
    pub size: [f64; 2],
    /// Long over short side.
    pub aspect: [f64; 2],
    pub angle: [f64; 2],
    pub sigma_loc: f64,
    pub sigma_theta: f64,
    pub confusion_rate: f64,
    pub fp_rate: f64,
    pub score_model: ScoreModel,
    pub proposals: ProposalConfig,
    /// Placement attempts per object before giving up.
    pub max_retries: usize,
    pub seed: u64,
}

pub fn default_taxonomy() -> Vec<CoarseClass> {
    ["airplane", "ship", "vehicle"]
        .iter()
        .map(|c| CoarseClass {
            name: c.to_string(),
            fine: (0..4).map(|i| format!("{c}-{i}")).collect(),
        })
        .collect()
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_width: 1024,
            image_height: 1024,
            num_images: 8,
            taxonomy: default_taxonomy(),
            objects: [10, 20],
            size: [24.0, 96.0],
            aspect: [1.0, 4.0],
            angle: [-FRAC_PI_2, FRAC_PI_2],
            sigma_loc: 2.0,
            sigma_theta: 0.05,
            confusion_rate: 0.1,
            fp_rate: 0.1,
            score_model: ScoreModel::Correlated,
            proposals: ProposalConfig::default(),
            max_retries: 200,
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] >= min && r[0] <= r[1]) {
        return Err(Error::InvalidInput(format!("{name} range {r:?} must be finite, ordered and >= {min}")));
    }
    Ok(())
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidInput(format!("{name} = {v} must lie in [0, 1]")));
    }
    Ok(())
}

impl SceneConfig {
    /// Default setup for the proposal NMS ablation.
    pub fn ablation() -> Self {
        Self {
            num_images: 16,
            score_model: ScoreModel::AntiCorrelated,
            ..Self::default()
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        self.taxonomy.iter().flat_map(|c| c.fine.iter().cloned()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidInput("image size must be positive".into()));
        }
        if self.taxonomy.is_empty() || self.taxonomy.iter().any(|c| c.fine.is_empty()) {
            return Err(Error::InvalidInput("every coarse class needs at least one fine class".into()));
        }
        let names = self.class_names();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains(char::is_whitespace) || names[..i].contains(n) {
                return Err(Error::InvalidInput(format!("class name `{n}` is empty, spaced or repeated")));
            }
        }
        if self.objects[0] > self.objects[1] {
            return Err(Error::InvalidInput(format!("object range {:?} is not ordered", self.objects)));
        }
        check_range("size", self.size, f64::MIN_POSITIVE)?;
        check_range("aspect", self.aspect, 1.0)?;
        check_range("angle", self.angle, f64::NEG_INFINITY)?;
        if !(self.sigma_loc >= 0.0 && self.sigma_loc.is_finite() && self.sigma_theta >= 0.0 && self.sigma_theta.is_finite()) {
            return Err(Error::InvalidInput("noise levels must be finite and >= 0".into()));
        }
        check_rate("confusion_rate", self.confusion_rate)?;
        check_rate("fp_rate", self.fp_rate)?;
        let p = &self.proposals;
        check_rate("drift_step", p.drift_step)?;
        check_rate("max_initial_drift", p.max_initial_drift)?;
        check_rate("background_score_max", p.background_score_max)?;
        if self.max_retries == 0 {
            return Err(Error::InvalidInput("max_retries must be >= 1".into()));
        }
        Ok(())
    }
}

/// A generated box with its source object and its IoU to that object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub det: Detection,
    /// Index into the image's ground truths, `None` for false positives and
    /// background proposals.
    pub source: Option<usize>,
    /// Rotated IoU with the source object (0 without one).
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneImage {
    pub name: String,
    pub gts: Vec<GroundTruth>,
    pub predictions: Vec<Scored>,
    pub proposals: Vec<Scored>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSet {
    pub class_names: Vec<String>,
    pub images: Vec<SceneImage>,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma checked").sample(rng)
}

fn clip_score(v: f64) -> f64 {
    v.clamp(MIN_SCORE, 1.0)
}

fn random_box(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Result<OrientedBox> {
    let w = uniform(rng, cfg.size);
    let h = w / uniform(rng, cfg.aspect);
    let theta = uniform(rng, cfg.angle);
    let cx = rng.random_range(0.0..cfg.image_width as f64);
    let cy = rng.random_range(0.0..cfg.image_height as f64);
    OrientedBox::new(cx, cy, w, h, theta)?.canonicalize()
}

fn inside_image(b: &OrientedBox, cfg: &SceneConfig) -> Result<bool> {
    let a = aabb_of(b)?;
    Ok(a.x_min >= 0.0 && a.y_min >= 0.0 && a.x_max <= cfg.image_width as f64 && a.y_max <= cfg.image_height as f64)
}

fn pack(rng: &mut ChaCha8Rng, cfg: &SceneConfig, image: usize) -> Result<Vec<OrientedBox>> {
    let target = rng.random_range(cfg.objects[0]..=cfg.objects[1]);
    let mut placed: Vec<OrientedBox> = Vec::with_capacity(target);
    'objects: for _ in 0..target {
        for _ in 0..cfg.max_retries {
            let b = random_box(rng, cfg)?;
            if !inside_image(&b, cfg)? {
                continue;
            }
            let mut clear = true;
            for p in &placed {
                if rotated_iou(p, &b)? >= MIN_PACK_IOU {
                    clear = false;
                    break;
                }
            }
            if clear {
                placed.push(b);
                continue 'objects;
            }
        }
        break;
    }
    if placed.len() < cfg.objects[0] {
        return Err(Error::Infeasible(format!(
            "image {image}: placed {} of at least {} objects after {} retries each",
            placed.len(),
            cfg.objects[0],
            cfg.max_retries
        )));
    }
    Ok(placed)
}

fn jitter(rng: &mut ChaCha8Rng, b: &OrientedBox, sigma_loc: f64, sigma_theta: f64) -> Result<OrientedBox> {
    let cx = b.cx + gauss(rng, sigma_loc);
    let cy = b.cy + gauss(rng, sigma_loc);
    // Keep sizes positive under heavy noise.
    let w = (b.w + gauss(rng, sigma_loc)).max(0.25 * b.w);
    let h = (b.h + gauss(rng, sigma_loc)).max(0.25 * b.h);
    let theta = b.theta + gauss(rng, sigma_theta);
    OrientedBox::new(cx, cy, w, h, theta)?.canonicalize()
}

fn model_score(rng: &mut ChaCha8Rng, model: ScoreModel, q: f64) -> f64 {
    let noise = gauss(rng, SCORE_NOISE);
    match model {
        ScoreModel::Correlated => clip_score(q + noise),
        ScoreModel::AntiCorrelated => clip_score(1.0 - q + noise),
    }
}

/// Maps each class to its siblings under the same coarse class.
fn siblings(cfg: &SceneConfig) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for c in &cfg.taxonomy {
        let group: Vec<usize> = (start..start + c.fine.len()).collect();
        for &k in &group {
            out.push(group.iter().copied().filter(|&j| j != k).collect());
        }
        start += c.fine.len();
    }
    out
}

fn predictions(rng: &mut ChaCha8Rng, cfg: &SceneConfig, gts: &[GroundTruth], sib: &[Vec<usize>]) -> Result<Vec<Scored>> {
    let n_classes = sib.len();
    let mut out = Vec::with_capacity(gts.len());
    for (gi, g) in gts.iter().enumerate() {
        let bbox = jitter(rng, &g.bbox, cfg.sigma_loc, cfg.sigma_theta)?;
        let quality = rotated_iou(&bbox, &g.bbox)?;
        let mut label = g.label;
        if rng.random_bool(cfg.confusion_rate) && !sib[label].is_empty() {
            label = sib[label][rng.random_range(0..sib[label].len())];
        }
        let score = model_score(rng, cfg.score_model, quality);
        out.push(Scored {
            det: Detection::new(bbox, score, Some(label)),
            source: Some(gi),
            quality,
        });
    }
    for _ in 0..gts.len() {
        if !rng.random_bool(cfg.fp_rate) {
            continue;
        }
        let bbox = random_box(rng, cfg)?;
        let label = rng.random_range(0..n_classes);
        let score = model_score(rng, cfg.score_model, 0.0);
        out.push(Scored {
            det: Detection::new(bbox, score, Some(label)),
            source: None,
            quality: 0.0,
        });
    }
    Ok(out)
}

fn proposals(rng: &mut ChaCha8Rng, cfg: &SceneConfig, gts: &[GroundTruth]) -> Result<Vec<Scored>> {
    let p = &cfg.proposals;
    let mut out = Vec::with_capacity(gts.len() * p.per_object + p.background);
    for (gi, g) in gts.iter().enumerate() {
        let b = g.bbox;
        let r0 = uniform(rng, [0.0, p.max_initial_drift]);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let base = rng.random_range(0.3..0.5);
        let (c, s) = (b.theta.cos(), b.theta.sin());
        for j in 0..p.per_object {
            let shift = sign * (r0 + j as f64 * p.drift_step) * b.w;
            let bbox = OrientedBox::new(b.cx + shift * c, b.cy + shift * s, b.w, b.h, b.theta)?;
            let quality = rotated_iou(&bbox, &b)?;
            let score = match cfg.score_model {
                ScoreModel::Correlated => clip_score(quality + gauss(rng, SCORE_NOISE)),
                ScoreModel::AntiCorrelated => clip_score(base + 0.05 * j as f64 + gauss(rng, 0.01)),
            };
            out.push(Scored {
                det: Detection::new(bbox, score, None),
                source: Some(gi),
                quality,
            });
        }
    }
    for _ in 0..p.background {
        let bbox = random_box(rng, cfg)?;
        let score = if p.background_score_max > 0.0 {
            rng.random_range(0.0..p.background_score_max)
        } else {
            0.0
        };
        out.push(Scored {
            det: Detection::new(bbox, score, None),
            source: None,
            quality: 0.0,
        });
    }
    Ok(out)
}

fn image_rng(seed: u64, image: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(image as u64);
    rng
}

/// Generates every image from its own stream of `cfg.seed`, so an image does
/// not depend on how many came before it.
pub fn gen_scene_set(cfg: &SceneConfig) -> Result<SceneSet> {
    cfg.validate()?;
    let sib = siblings(cfg);
    let n_classes = sib.len();
    let images = (0..cfg.num_images)
        .map(|i| {
            let mut rng = image_rng(cfg.seed, i);
            let gts: Vec<GroundTruth> = pack(&mut rng, cfg, i)?
                .into_iter()
                .map(|b| GroundTruth::new(b, rng.random_range(0..n_classes)))
                .collect();
            let predictions = predictions(&mut rng, cfg, &gts, &sib)?;
            let proposals = proposals(&mut rng, cfg, &gts)?;
            Ok(SceneImage {
                name: format!("img_{i:04}"),
                gts,
                predictions,
                proposals,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneSet {
        class_names: cfg.class_names(),
        images,
    })
}

/// Class name used for proposals in DOTA files.
pub const PROPOSAL_CLASS: &str = "proposal";

/// Writes `gts/`, `dets/` and `proposals/` with one DOTA file per image.
pub fn write_scene_set(set: &SceneSet, dir: &Path) -> Result<()> {
    let name_of = |l: usize| -> Result<String> {
        set.class_names
            .get(l)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("label {l} has no class name")))
    };
    for sub in ["gts", "dets", "proposals"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for img in &set.images {
        let anns = img
            .gts
            .iter()
            .map(|g| {
                Ok(Annotation {
                    bbox: g.bbox,
                    class: name_of(g.label)?,
                    difficult: g.difficult,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dets = img
            .predictions
            .iter()
            .map(|p| {
                Ok(DetectionRecord {
                    bbox: p.det.bbox,
                    class: name_of(p.det.label.unwrap_or(usize::MAX))?,
                    score: p.det.score,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let props: Vec<DetectionRecord> = img
            .proposals
            .iter()
            .map(|p| DetectionRecord {
                bbox: p.det.bbox,
                class: PROPOSAL_CLASS.into(),
                score: p.det.score,
            })
            .collect();
        let file = format!("{}.txt", img.name);
        for (sub, text) in [
            ("gts", format_annotations(&anns)?),
            ("dets", format_detections(&dets)?),
            ("proposals", format_detections(&props)?),
        ] {
            let path = dir.join(sub).join(&file);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecallSummary {
    pub r50: f64,
    pub r75: f64,
    pub r85: f64,
    pub ar: f64,
}

impl From<&RecallRow> for RecallSummary {
    fn from(r: &RecallRow) -> Self {
        Self {
            r50: r.at(0.5),
            r75: r.at(0.75),
            r85: r.at(0.85),
            ar: r.ar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub budget: usize,
    pub with_nms: RecallSummary,
    pub without_nms: RecallSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub nms_iou: f64,
    pub num_images: usize,
    pub num_gts: usize,
    pub rows: Vec<AblationRow>,
}

/// Recall of the generated proposals with and without class-agnostic
/// rotated NMS at each budget.
pub fn nms_ablation(cfg: &SceneConfig, budgets: &[usize], nms_iou: f64) -> Result<AblationTable> {
    if budgets.is_empty() {
        return Err(Error::InvalidInput("need at least one budget".into()));
    }
    let set = gen_scene_set(cfg)?;
    let max_budget = *budgets.iter().max().expect("non-empty");
    let gts: Vec<Vec<OrientedBox>> = set.images.iter().map(|i| i.gts.iter().map(|g| g.bbox).collect()).collect();
    let mut rows_by_mode = Vec::with_capacity(2);
    for use_nms in [true, false] {
        let selected = set
            .images
            .iter()
            .map(|img| {
                let dets: Vec<Detection> = img.proposals.iter().map(|p| p.det).collect();
                select_proposals(&dets, max_budget, use_nms, nms_iou)
            })
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<ProposalImage<'_>> = selected
            .iter()
            .zip(&gts)
            .map(|(p, g)| ProposalImage { proposals: p, gts: g })
            .collect();
        rows_by_mode.push(average_recall(&views, budgets)?);
    }
    let rows = rows_by_mode[0]
        .iter()
        .zip(&rows_by_mode[1])
        .map(|(w, wo)| AblationRow {
            budget: w.budget,
            with_nms: w.into(),
            without_nms: wo.into(),
        })
        .collect();
    Ok(AblationTable {
        nms_iou,
        num_images: set.images.len(),
        num_gts: gts.iter().map(Vec::len).sum(),
        rows,
    })
}

/// Same as [`nms_ablation`] at the default proposal NMS threshold.
pub fn nms_ablation_default(cfg: &SceneConfig, budgets: &[usize]) -> Result<AblationTable> {
    nms_ablation(cfg, budgets, PROPOSAL_NMS_IOU)
}
