//! Per-pixel instance labels and walnut bounding boxes.
//!
//! Each pixel's label comes from the center ray only: the instance id of the
//! closest primitive it hits, or 0 for a miss or any non-walnut surface.
//! Boxes cover every visible pixel of an instance, even when occlusion splits
//! it into several blobs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::camera::Camera;
use crate::scene::{ClassId, HitRecord, Scene};

/// Class index written to annotation files for walnuts.
pub const WALNUT_CLASS_INDEX: u32 = 0;

pub const DEFAULT_MIN_PIXELS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: u32,
    pub height: u32,
    /// Row-major instance ids; 0 is background.
    pub ids: Vec<u32>,
}

impl LabelImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            ids: vec![0; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.ids[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, id: u32) {
        self.ids[y as usize * self.width as usize + x as usize] = id;
    }
}

/// Label contributed by a center-ray hit.
pub fn label_for_hit(scene: &Scene, hit: Option<&HitRecord>) -> u32 {
    hit.map_or(0, |h| {
        let p = &scene.primitives()[h.primitive_index];
        if p.class_id == ClassId::Walnut {
            p.instance_id
        } else {
            0
        }
    })
}

/// Per-pixel results of the center ray, row-major.
fn center_hits<T, F>(scene: &Scene, camera: &Camera, f: F) -> Vec<T>
where
    T: Send + Clone + Default,
    F: Fn(Option<HitRecord>) -> T + Sync,
{
    let frame = camera.frame();
    let w = camera.width as usize;
    let mut out = vec![T::default(); w * camera.height as usize];
    out.par_chunks_mut(w).enumerate().for_each(|(py, row)| {
        for (px, slot) in row.iter_mut().enumerate() {
            let ray = frame.ray(px as u32, py as u32, (0.5, 0.5));
            *slot = f(scene.intersect_closest(&ray));
        }
    });
    out
}

pub fn label_pixels(scene: &Scene, camera: &Camera) -> LabelImage {
    let ids = center_hits(scene, camera, |hit| label_for_hit(scene, hit.as_ref()));
    LabelImage {
        width: camera.width,
        height: camera.height,
        ids,
    }
}

/// Surface class seen by each pixel's center ray (`None` on a miss).
pub fn class_pixels(scene: &Scene, camera: &Camera) -> Vec<Option<ClassId>> {
    center_hits(scene, camera, |hit| {
        hit.map(|h| scene.primitives()[h.primitive_index].class_id)
    })
}

/// Tight pixel box of one visible walnut; bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceBox {
    pub instance_id: u32,
    pub class_id: ClassId,
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
    pub visible_pixel_count: u32,
}

/// One box per nonzero id with at least `min_pixels` pixels, sorted by id.
pub fn extract_boxes(labels: &LabelImage, min_pixels: u32) -> Vec<InstanceBox> {
    let mut boxes: BTreeMap<u32, InstanceBox> = BTreeMap::new();
    let w = labels.width as usize;
    for (i, &id) in labels.ids.iter().enumerate() {
        if id == 0 {
            continue;
        }
        let (x, y) = ((i % w) as u32, (i / w) as u32);
        boxes
            .entry(id)
            .and_modify(|b| {
                b.x_min = b.x_min.min(x);
                b.x_max = b.x_max.max(x);
                b.y_min = b.y_min.min(y);
                b.y_max = b.y_max.max(y);
                b.visible_pixel_count += 1;
            })
            .or_insert(InstanceBox {
                instance_id: id,
                class_id: ClassId::Walnut,
                x_min: x,
                y_min: y,
                x_max: x,
                y_max: y,
                visible_pixel_count: 1,
            });
    }
    boxes
        .into_values()
        .filter(|b| b.visible_pixel_count >= min_pixels.max(1))
        .collect()
}

/// Normalized center/size box in the single-class detection label format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub class_id: u32,
    pub x_center: f64,
    pub y_center: f64,
    pub width: f64,
    pub height: f64,
}

impl Annotation {
    /// Inclusive pixel box that this annotation covers on a `width x height`
    /// grid.
    pub fn to_pixel_box(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let (w, h) = (width as f64, height as f64);
        let x_min = ((self.x_center - self.width / 2.0) * w).round() as u32;
        let y_min = ((self.y_center - self.height / 2.0) * h).round() as u32;
        let x_len = (self.width * w).round() as u32;
        let y_len = (self.height * h).round() as u32;
        (x_min, y_min, x_min + x_len.max(1) - 1, y_min + y_len.max(1) - 1)
    }

    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.x_center - self.width / 2.0,
            self.y_center - self.height / 2.0,
            self.x_center + self.width / 2.0,
            self.y_center + self.height / 2.0,
        )
    }
}

fn class_index(class: ClassId) -> u32 {
    match class {
        ClassId::Walnut => WALNUT_CLASS_INDEX,
        other => 1 + other as u32,
    }
}

pub fn to_annotations(boxes: &[InstanceBox], width: u32, height: u32) -> Vec<Annotation> {
    let (w, h) = (width as f64, height as f64);
    boxes
        .iter()
        .map(|b| Annotation {
            class_id: class_index(b.class_id),
            x_center: (b.x_min + b.x_max + 1) as f64 / 2.0 / w,
            y_center: (b.y_min + b.y_max + 1) as f64 / 2.0 / h,
            width: (b.x_max - b.x_min + 1) as f64 / w,
            height: (b.y_max - b.y_min + 1) as f64 / h,
        })
        .collect()
}

/// `class x_center y_center width height` per line, six fractional digits.
pub fn format_annotations(annotations: &[Annotation]) -> String {
    let mut out = String::new();
    for a in annotations {
        writeln!(
            out,
            "{} {:.6} {:.6} {:.6} {:.6}",
            a.class_id, a.x_center, a.y_center, a.width, a.height
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum LabelParseError {
    #[error("line {line}: expected 5 fields `class x_center y_center width height`, got {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: cannot parse {field} from {text:?}")]
    Number {
        line: usize,
        field: &'static str,
        text: String,
    },
    #[error("line {line}: box ({x_center}, {y_center}, {width}, {height}) leaves the unit square")]
    OutOfBounds {
        line: usize,
        x_center: f64,
        y_center: f64,
        width: f64,
        height: f64,
    },
}

/// Tolerance on normalized coordinates when reading label files.
pub const UNIT_SQUARE_TOLERANCE: f64 = 1e-6;

pub(crate) fn within_unit_square(xc: f64, yc: f64, w: f64, h: f64, tol: f64) -> bool {
    let ok = |c: f64, s: f64| {
        s.is_finite() && c.is_finite() && s > 0.0 && s <= 1.0 + tol && c - s / 2.0 >= -tol && c + s / 2.0 <= 1.0 + tol
    };
    ok(xc, w) && ok(yc, h)
}

pub(crate) fn parse_number<T: std::str::FromStr>(
    text: &str,
    line: usize,
    field: &'static str,
) -> Result<T, LabelParseError> {
    text.parse().map_err(|_| LabelParseError::Number {
        line,
        field,
        text: text.to_string(),
    })
}

/// Parses an annotation file body. Blank lines are skipped; lines are
/// numbered from 1.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>, LabelParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(LabelParseError::FieldCount {
                line,
                found: fields.len(),
            });
        }
        let a = Annotation {
            class_id: parse_number(fields[0], line, "class_id")?,
            x_center: parse_number(fields[1], line, "x_center")?,
            y_center: parse_number(fields[2], line, "y_center")?,
            width: parse_number(fields[3], line, "width")?,
            height: parse_number(fields[4], line, "height")?,
        };
        if !within_unit_square(a.x_center, a.y_center, a.width, a.height, UNIT_SQUARE_TOLERANCE) {
            return Err(LabelParseError::OutOfBounds {
                line,
                x_center: a.x_center,
                y_center: a.y_center,
                width: a.width,
                height: a.height,
            });
        }
        out.push(a);
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum LabelFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: LabelParseError,
    },
}

pub fn write_annotation_file(path: &Path, annotations: &[Annotation]) -> Result<(), LabelFileError> {
    std::fs::write(path, format_annotations(annotations)).map_err(|source| LabelFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_annotation_file(path: &Path) -> Result<Vec<Annotation>, LabelFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| LabelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_annotations(&text).map_err(|source| LabelFileError::Parse {
        path: path.display().to_string(),
        source,
    })
}
