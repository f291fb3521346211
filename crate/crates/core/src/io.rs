//! On-disk formats.
//!
//! * COCO detection results: a JSON array of
//!   `{"image_id", "category_id", "bbox": [x, y, w, h], "score"}`.
//! * COCO annotations: `{"images": [{"id", "width", "height"}], "annotations":
//!   [{"image_id", "category_id", "bbox"}], "categories": [{"id", "name"}]}`.
//! * Loss batches, as JSON `{"L", "R", "K", "s", "q", "positives"}` or the binary
//!   `TCB1` layout (see [`encode_tcd_binary`]).
//! * MC passes: `{"image_id", "width", "height", "passes": [{"n", "detections":
//!   [{"bbox", "class", "score"}]}]}`, or an array of such objects.
//!
//! Unknown JSON fields are ignored. All writes go through a temporary file in the
//! destination directory and an atomic rename.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::matching::{Detection, GroundTruthBox, ImageId};
use crate::tcd::{Positive, TcdBatch};
use crate::uncertainty::{McImage, McPass};

pub const TCD_MAGIC: &[u8; 4] = b"TCB1";

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: display(path),
        source,
    })
}

fn parse_json<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::parse(display(path), e.to_string()))
}

/// Writes `bytes` to `path` atomically (temporary file + rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: display(path),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out =
        serde_json::to_vec_pretty(value).map_err(|e| Error::InvalidInput(format!("serializing JSON: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, &to_json_bytes(value)?)
}

/// CSV with a header row taken from the record's field names.
pub fn to_csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::InvalidInput(format!("serializing CSV: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidInput(format!("serializing CSV: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

/// Writes `payload` as JSON, or `rows` as CSV.
pub fn write_report<T: Serialize, R: Serialize>(
    path: &Path,
    format: ReportFormat,
    payload: &T,
    rows: &[R],
) -> Result<()> {
    let bytes = match format {
        ReportFormat::Json => to_json_bytes(payload)?,
        ReportFormat::Csv => to_csv_bytes(rows)?,
    };
    atomic_write(path, &bytes)
}

// ---------------------------------------------------------------------------
// COCO

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoDetection {
    image_id: ImageId,
    category_id: u32,
    bbox: [f64; 4],
    score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoImage {
    id: ImageId,
    width: f64,
    height: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    image_id: ImageId,
    category_id: u32,
    bbox: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoCategory {
    id: u32,
    name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoAnnotationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    info: Option<serde_json::Value>,
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

fn xywh_box(path: &Path, key: &str, b: [f64; 4]) -> Result<BBox> {
    BBox::from_xywh(b[0], b[1], b[2], b[3])
        .map_err(|e| Error::parse(format!("{}: {key}", display(path)), e.to_string()))
}

pub fn load_coco_detections(path: &Path) -> Result<Vec<Detection>> {
    let raw: Vec<CocoDetection> = parse_json(path, &read_bytes(path)?)?;
    raw.into_iter()
        .enumerate()
        .map(|(i, d)| {
            let bbox = xywh_box(path, &format!("[{i}].bbox"), d.bbox)?;
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::parse(
                    format!("{}: [{i}].score", display(path)),
                    format!("score {} outside [0, 1]", d.score),
                ));
            }
            Ok(Detection {
                image_id: d.image_id,
                bbox,
                class_id: d.category_id,
                score: d.score,
            })
        })
        .collect()
}

pub fn coco_detections_bytes(dets: &[Detection]) -> Result<Vec<u8>> {
    let raw: Vec<CocoDetection> = dets
        .iter()
        .map(|d| CocoDetection {
            image_id: d.image_id.clone(),
            category_id: d.class_id,
            bbox: d.bbox.to_xywh(),
            score: d.score,
        })
        .collect();
    let mut out = serde_json::to_vec(&raw).map_err(|e| Error::InvalidInput(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_coco_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    atomic_write(path, &coco_detections_bytes(dets)?)
}

/// Ground truth plus the category and image tables of an annotation file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Annotations {
    pub ground_truth: Vec<GroundTruthBox>,
    pub categories: BTreeMap<u32, String>,
    /// `(width, height)` per image.
    pub images: BTreeMap<ImageId, (f64, f64)>,
}

pub fn load_coco_annotations(path: &Path) -> Result<Annotations> {
    let raw: CocoAnnotationFile = parse_json(path, &read_bytes(path)?)?;
    let mut images = BTreeMap::new();
    for (i, im) in raw.images.into_iter().enumerate() {
        if !(im.width > 0.0 && im.height > 0.0) {
            return Err(Error::parse(
                format!("{}: images[{i}]", display(path)),
                format!("non-positive size {}x{}", im.width, im.height),
            ));
        }
        images.insert(im.id, (im.width, im.height));
    }
    let categories: BTreeMap<u32, String> = raw.categories.into_iter().map(|c| (c.id, c.name)).collect();
    let mut ground_truth = Vec::with_capacity(raw.annotations.len());
    for (i, a) in raw.annotations.into_iter().enumerate() {
        let key = |field: &str| format!("{}: annotations[{i}].{field}", display(path));
        if !images.contains_key(&a.image_id) {
            return Err(Error::parse(key("image_id"), format!("unknown image {}", a.image_id)));
        }
        if !categories.contains_key(&a.category_id) {
            return Err(Error::parse(
                key("category_id"),
                format!("unknown category {}", a.category_id),
            ));
        }
        let bbox = xywh_box(path, &format!("annotations[{i}].bbox"), a.bbox)?;
        ground_truth.push(GroundTruthBox {
            image_id: a.image_id,
            bbox,
            class_id: a.category_id,
        });
    }
    Ok(Annotations {
        ground_truth,
        categories,
        images,
    })
}

pub fn coco_annotations_bytes(ann: &Annotations, info: Option<serde_json::Value>) -> Result<Vec<u8>> {
    let raw = CocoAnnotationFile {
        info,
        images: ann
            .images
            .iter()
            .map(|(id, &(width, height))| CocoImage {
                id: id.clone(),
                width,
                height,
            })
            .collect(),
        annotations: ann
            .ground_truth
            .iter()
            .enumerate()
            .map(|(i, g)| CocoAnnotation {
                id: Some(i as u64 + 1),
                image_id: g.image_id.clone(),
                category_id: g.class_id,
                bbox: g.bbox.to_xywh(),
            })
            .collect(),
        categories: ann
            .categories
            .iter()
            .map(|(&id, name)| CocoCategory { id, name: name.clone() })
            .collect(),
    };
    let mut out = serde_json::to_vec(&raw).map_err(|e| Error::InvalidInput(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_coco_annotations(path: &Path, ann: &Annotations, info: Option<serde_json::Value>) -> Result<()> {
    atomic_write(path, &coco_annotations_bytes(ann, info)?)
}

/// Detections and annotations checked against each other.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub detections: Vec<Detection>,
    pub annotations: Annotations,
}

impl DatasetBundle {
    /// Rejects detections referencing unknown images or categories.
    pub fn new(detections: Vec<Detection>, annotations: Annotations, source: &str) -> Result<Self> {
        for (i, d) in detections.iter().enumerate() {
            if !annotations.images.contains_key(&d.image_id) {
                return Err(Error::parse(
                    format!("{source}: [{i}].image_id"),
                    format!("unknown image {}", d.image_id),
                ));
            }
            if !annotations.categories.contains_key(&d.class_id) {
                return Err(Error::parse(
                    format!("{source}: [{i}].category_id"),
                    format!("unknown category {}", d.class_id),
                ));
            }
        }
        Ok(Self {
            detections,
            annotations,
        })
    }

    pub fn load(detections: &Path, annotations: &Path) -> Result<Self> {
        let dets = load_coco_detections(detections)?;
        let ann = load_coco_annotations(annotations)?;
        Self::new(dets, ann, &display(detections))
    }
}

// ---------------------------------------------------------------------------
// Loss batches

#[derive(Debug, Serialize, Deserialize)]
struct TcdJson {
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "R")]
    r: usize,
    #[serde(rename = "K")]
    k: usize,
    s: Vec<f64>,
    q: Vec<u8>,
    positives: Vec<Vec<Positive>>,
}

pub fn tcd_json_bytes(batch: &TcdBatch) -> Result<Vec<u8>> {
    let raw = TcdJson {
        l: batch.images,
        r: batch.locations,
        k: batch.classes,
        s: batch.s.clone(),
        q: batch.q.clone(),
        positives: batch.positives.clone(),
    };
    let mut out = serde_json::to_vec(&raw).map_err(|e| Error::InvalidInput(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

/// Binary layout, little-endian: magic `TCB1`; `u32` L, R, K; `L*R*K` `f32`
/// confidences; `L*R*K` label bytes; then per image a `u32` count followed by that
/// many `(f32 iou, f32 shat)` pairs.
///
/// Confidences are narrowed to `f32`.
pub fn encode_tcd_binary(batch: &TcdBatch) -> Result<Vec<u8>> {
    let dim =
        |v: usize, name: &str| u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{name} = {v} exceeds u32")));
    let mut out = Vec::with_capacity(16 + batch.s.len() * 5);
    out.extend_from_slice(TCD_MAGIC);
    out.extend_from_slice(&dim(batch.images, "L")?.to_le_bytes());
    out.extend_from_slice(&dim(batch.locations, "R")?.to_le_bytes());
    out.extend_from_slice(&dim(batch.classes, "K")?.to_le_bytes());
    for &v in &batch.s {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&batch.q);
    for list in &batch.positives {
        out.extend_from_slice(&dim(list.len(), "positive count")?.to_le_bytes());
        for p in list {
            out.extend_from_slice(&(p.iou as f32).to_le_bytes());
            out.extend_from_slice(&(p.shat as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::parse(
                format!("{}: byte {}", self.source, self.pos),
                format!("truncated while reading {what}"),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, what: &str) -> Result<f64> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
    }
}

pub fn decode_tcd_binary(bytes: &[u8], source: &str) -> Result<TcdBatch> {
    let mut c = Cursor { bytes, pos: 0, source };
    if c.take(4, "magic")? != TCD_MAGIC {
        return Err(Error::parse(format!("{source}: byte 0"), "missing TCB1 magic"));
    }
    let l = c.u32("L")? as usize;
    let r = c.u32("R")? as usize;
    let k = c.u32("K")? as usize;
    let n = l
        .checked_mul(r)
        .and_then(|v| v.checked_mul(k))
        .filter(|&n| n.saturating_mul(5) <= bytes.len())
        .ok_or_else(|| Error::parse(format!("{source}: byte 4"), "dimensions exceed file size"))?;
    let mut s = Vec::with_capacity(n);
    for _ in 0..n {
        s.push(c.f32("s")?);
    }
    let q = c.take(n, "q")?.to_vec();
    let mut positives = Vec::with_capacity(l);
    for _ in 0..l {
        let count = c.u32("positive count")? as usize;
        let mut list = Vec::with_capacity(count.min(bytes.len() / 8));
        for _ in 0..count {
            let iou = c.f32("iou")?;
            let shat = c.f32("shat")?;
            list.push(Positive { iou, shat });
        }
        positives.push(list);
    }
    if c.pos != bytes.len() {
        return Err(Error::parse(
            format!("{source}: byte {}", c.pos),
            format!("{} trailing bytes", bytes.len() - c.pos),
        ));
    }
    TcdBatch::new(l, r, k, s, q, positives).map_err(|e| Error::parse(source, e.to_string()))
}

/// Loads a batch, choosing the binary decoder when the file starts with `TCB1`.
pub fn load_tcd_batch(path: &Path) -> Result<TcdBatch> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(TCD_MAGIC) {
        return decode_tcd_binary(&bytes, &display(path));
    }
    let raw: TcdJson = parse_json(path, &bytes)?;
    TcdBatch::new(raw.l, raw.r, raw.k, raw.s, raw.q, raw.positives)
        .map_err(|e| Error::parse(display(path), e.to_string()))
}

pub fn write_tcd_batch(path: &Path, batch: &TcdBatch, binary: bool) -> Result<()> {
    let bytes = if binary {
        encode_tcd_binary(batch)?
    } else {
        tcd_json_bytes(batch)?
    };
    atomic_write(path, &bytes)
}

// ---------------------------------------------------------------------------
// MC passes

#[derive(Debug, Serialize, Deserialize)]
struct McDetectionJson {
    bbox: [f64; 4],
    class: u32,
    score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct McPassJson {
    n: usize,
    detections: Vec<McDetectionJson>,
}

#[derive(Debug, Serialize, Deserialize)]
struct McImageJson {
    image_id: ImageId,
    width: f64,
    height: f64,
    passes: Vec<McPassJson>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum McFile {
    Many(Vec<McImageJson>),
    One(McImageJson),
}

pub fn load_mc_passes(path: &Path) -> Result<Vec<McImage>> {
    let file: McFile = parse_json(path, &read_bytes(path)?)?;
    let raw = match file {
        McFile::One(x) => vec![x],
        McFile::Many(v) => v,
    };
    let mut seen = BTreeSet::new();
    let mut images = Vec::with_capacity(raw.len());
    for (i, im) in raw.into_iter().enumerate() {
        let at = |key: String| format!("{}: [{i}]{key}", display(path));
        if !seen.insert(im.image_id.clone()) {
            return Err(Error::parse(
                at(".image_id".into()),
                format!("duplicate image {}", im.image_id),
            ));
        }
        let mut passes = Vec::with_capacity(im.passes.len());
        for (p, pass) in im.passes.into_iter().enumerate() {
            let mut detections = Vec::with_capacity(pass.detections.len());
            for (m, d) in pass.detections.into_iter().enumerate() {
                let key = format!(".passes[{p}].detections[{m}]");
                let bbox = BBox::from_xywh(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3])
                    .map_err(|e| Error::parse(at(format!("{key}.bbox")), e.to_string()))?;
                if !(0.0..=1.0).contains(&d.score) {
                    return Err(Error::parse(
                        at(format!("{key}.score")),
                        format!("score {} outside [0, 1]", d.score),
                    ));
                }
                detections.push(Detection {
                    image_id: im.image_id.clone(),
                    bbox,
                    class_id: d.class,
                    score: d.score,
                });
            }
            passes.push(McPass {
                index: pass.n,
                detections,
            });
        }
        let image = McImage {
            image_id: im.image_id,
            width: im.width,
            height: im.height,
            passes,
        };
        image
            .validate()
            .map_err(|e| Error::parse(at(String::new()), e.to_string()))?;
        images.push(image);
    }
    Ok(images)
}

pub fn mc_passes_bytes(images: &[McImage]) -> Result<Vec<u8>> {
    let raw: Vec<McImageJson> = images
        .iter()
        .map(|im| McImageJson {
            image_id: im.image_id.clone(),
            width: im.width,
            height: im.height,
            passes: im
                .passes
                .iter()
                .map(|p| McPassJson {
                    n: p.index,
                    detections: p
                        .detections
                        .iter()
                        .map(|d| McDetectionJson {
                            bbox: d.bbox.to_xywh(),
                            class: d.class_id,
                            score: d.score,
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect();
    to_json_bytes(&raw)
}

pub fn write_mc_passes(path: &Path, images: &[McImage]) -> Result<()> {
    atomic_write(path, &mc_passes_bytes(images)?)
}
