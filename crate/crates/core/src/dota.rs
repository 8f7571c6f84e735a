//! DOTA-style quadrilateral text files.
//!
//! Annotation lines are `x1 y1 x2 y2 x3 y3 x4 y4 class difficulty`;
//! detection lines replace the difficulty with a confidence score. Quads are
//! read as the minimum-area rectangle of their four points; boxes are written
//! as the corners of their canonical form with six decimals. `imagesource:`
//! and `gsd:` header lines and blank lines are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{min_area_rect, OrientedBox, Point};

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub bbox: OrientedBox,
    pub class: String,
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub bbox: OrientedBox,
    pub class: String,
    pub score: f64,
}

fn is_header(line: &str) -> bool {
    line.starts_with("imagesource:") || line.starts_with("gsd:")
}

/// Splits a line into its quad box, class name and trailing token.
fn parse_quad_line<'a>(line: &'a str, lineno: usize, path: &Path) -> Result<(OrientedBox, &'a str, &'a str)> {
    let err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        msg,
    };
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 10 {
        return Err(err(format!("expected 10 tokens, found {}", tokens.len())));
    }
    let mut coords = [0.0f64; 8];
    for (i, t) in tokens[..8].iter().enumerate() {
        coords[i] = t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| err(format!("coordinate {} is not a number: `{t}`", i + 1)))?;
    }
    let pts: Vec<Point> = coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect();
    let bbox = min_area_rect(&pts).map_err(|e| err(format!("degenerate quad: {e}")))?;
    Ok((bbox, tokens[8], tokens[9]))
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !is_header(l))
}

pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<Annotation>> {
    lines(text)
        .map(|(n, l)| {
            let (bbox, class, diff) = parse_quad_line(l, n, path)?;
            let difficult = match diff {
                "0" => false,
                "1" | "2" => true,
                other => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: n,
                        msg: format!("difficulty must be 0, 1 or 2, found `{other}`"),
                    })
                }
            };
            Ok(Annotation {
                bbox,
                class: class.to_string(),
                difficult,
            })
        })
        .collect()
}

pub fn parse_detections(text: &str, path: &Path) -> Result<Vec<DetectionRecord>> {
    lines(text)
        .map(|(n, l)| {
            let (bbox, class, score) = parse_quad_line(l, n, path)?;
            let score = score.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: n,
                msg: format!("score is not a number: `{score}`"),
            })?;
            Ok(DetectionRecord {
                bbox,
                class: class.to_string(),
                score,
            })
        })
        .collect()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_dota(path: &Path) -> Result<Vec<Annotation>> {
    parse_annotations(&read(path)?, path)
}

pub fn parse_dota_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    parse_detections(&read(path)?, path)
}

fn fmt6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

const SNAP_ITERS: usize = 16;

fn rounded_corners(b: &OrientedBox) -> Result<[String; 8]> {
    let c = b.canonicalize()?.corners()?;
    Ok(std::array::from_fn(|i| {
        let p = c[i / 2];
        fmt6(if i % 2 == 0 { p.x } else { p.y })
    }))
}

/// Rounded corners that parse back to a box with the same rounded corners,
/// so write-parse-write is stable. Refits until the text stops changing.
fn stable_corners(b: &OrientedBox) -> Result<[String; 8]> {
    let mut text = rounded_corners(b)?;
    for _ in 0..SNAP_ITERS {
        let pts: Vec<Point> = text
            .chunks_exact(2)
            .map(|c| Point::new(c[0].parse().unwrap_or(0.0), c[1].parse().unwrap_or(0.0)))
            .collect();
        let Ok(refit) = min_area_rect(&pts) else { break };
        let next = rounded_corners(&refit)?;
        if next == text {
            break;
        }
        text = next;
    }
    Ok(text)
}

fn push_corners(out: &mut String, b: &OrientedBox) -> Result<()> {
    for v in stable_corners(b)? {
        out.push_str(&v);
        out.push(' ');
    }
    Ok(())
}

fn check_class(class: &str) -> Result<()> {
    if class.is_empty() || class.contains(char::is_whitespace) {
        return Err(Error::InvalidInput(format!("class name `{class}` must be one non-empty token")));
    }
    Ok(())
}

pub fn format_annotations(anns: &[Annotation]) -> Result<String> {
    let mut out = String::new();
    for a in anns {
        check_class(&a.class)?;
        push_corners(&mut out, &a.bbox)?;
        let _ = writeln!(out, "{} {}", a.class, u8::from(a.difficult));
    }
    Ok(out)
}

pub fn format_detections(dets: &[DetectionRecord]) -> Result<String> {
    let mut out = String::new();
    for d in dets {
        check_class(&d.class)?;
        push_corners(&mut out, &d.bbox)?;
        let _ = writeln!(out, "{} {}", d.class, fmt6(d.score));
    }
    Ok(out)
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_dota(anns: &[Annotation], path: &Path) -> Result<()> {
    write(path, format_annotations(anns)?)
}

pub fn write_dota_detections(dets: &[DetectionRecord], path: &Path) -> Result<()> {
    write(path, format_detections(dets)?)
}
