//! COCO-shaped detection datasets: ingest, validation, splitting and
//! per-class statistics.
//!
//! A [`Dataset`] is validated on construction and immutable afterwards, so
//! every value of the type satisfies the id-uniqueness, reference and
//! bbox-in-bounds invariants.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

/// Where an annotation came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Real,
    Synthetic { strategy: String, seed: u64 },
}

impl Provenance {
    pub fn is_real(&self) -> bool {
        matches!(self, Provenance::Real)
    }

    pub fn synthetic(strategy: impl fmt::Display, seed: u64) -> Self {
        Provenance::Synthetic { strategy: strategy.to_string(), seed }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox<f64>,
    pub provenance: Provenance,
}

/// Validation split request. `val_fraction` must lie strictly inside (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(val_fraction: f64, seed: u64) -> Result<Self> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::param(format!("val_fraction must be in (0,1), got {val_fraction}")));
        }
        Ok(SplitSpec { val_fraction, seed })
    }
}

/// A bbox that was pulled back inside its image during ingest.
#[derive(Clone, Debug, PartialEq)]
pub struct ClampEvent {
    pub annotation_id: u64,
    pub before: BBox<f64>,
    pub after: BBox<f64>,
}

impl fmt::Display for ClampEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.before;
        let a = &self.after;
        write!(
            f,
            "annotation {}: bbox [{}, {}, {}, {}] clamped to [{}, {}, {}, {}]",
            self.annotation_id, b.x, b.y, b.w, b.h, a.x, a.y, a.w, a.h
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<ImageRecord>,
    annotations: Vec<Annotation>,
    categories: Vec<Category>,
    image_index: BTreeMap<u64, usize>,
    category_index: BTreeMap<u64, usize>,
}

impl Dataset {
    /// Builds a dataset, rejecting anything that violates the invariants.
    /// Out-of-bounds boxes are errors here; clamping only happens on ingest.
    pub fn new(
        images: Vec<ImageRecord>,
        annotations: Vec<Annotation>,
        categories: Vec<Category>,
    ) -> Result<Self> {
        let mut image_index = BTreeMap::new();
        for (i, img) in images.iter().enumerate() {
            if img.width == 0 || img.height == 0 {
                return Err(Error::InvalidImage { id: img.id, reason: "zero width or height".into() });
            }
            if image_index.insert(img.id, i).is_some() {
                return Err(Error::DuplicateId { kind: "image", id: img.id });
            }
        }
        let mut category_index = BTreeMap::new();
        for (i, cat) in categories.iter().enumerate() {
            if cat.name.trim().is_empty() {
                return Err(Error::InvalidCategory { id: cat.id, reason: "empty name".into() });
            }
            if category_index.insert(cat.id, i).is_some() {
                return Err(Error::DuplicateId { kind: "category", id: cat.id });
            }
        }
        let mut seen = HashSet::with_capacity(annotations.len());
        for ann in &annotations {
            if !seen.insert(ann.id) {
                return Err(Error::DuplicateId { kind: "annotation", id: ann.id });
            }
            let Some(&img_idx) = image_index.get(&ann.image_id) else {
                return Err(Error::DanglingImage { annotation: ann.id, image_id: ann.image_id });
            };
            if !category_index.contains_key(&ann.category_id) {
                return Err(Error::DanglingCategory { annotation: ann.id, category_id: ann.category_id });
            }
            let img = &images[img_idx];
            if !bbox_in_bounds(&ann.bbox, img.width, img.height) {
                return Err(Error::BoxOutOfBounds { annotation: ann.id });
            }
        }
        Ok(Dataset { images, annotations, categories, image_index, category_index })
    }

    /// Parses a COCO document, clamping boxes into their images.
    pub fn from_coco_str(doc: &str) -> std::result::Result<(Self, Vec<ClampEvent>), CocoParseError> {
        let coco: CocoDocument = serde_json::from_str(doc).map_err(CocoParseError::Json)?;
        coco.into_dataset().map_err(CocoParseError::Invalid)
    }

    pub fn to_coco_json(&self) -> String {
        let doc = CocoDocument::from(self);
        let mut s = serde_json::to_string_pretty(&doc).expect("dataset serializes");
        s.push('\n');
        s
    }

    pub fn write_coco(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_coco_json().as_bytes())
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.image_index.get(&id).map(|&i| &self.images[i])
    }

    pub fn category(&self, id: u64) -> Option<&Category> {
        self.category_index.get(&id).map(|&i| &self.categories[i])
    }

    pub fn annotations_for(&self, image_id: u64) -> impl Iterator<Item = &Annotation> {
        self.annotations.iter().filter(move |a| a.image_id == image_id)
    }

    /// Annotations grouped by image id, in input order within each group.
    pub fn annotations_by_image(&self) -> BTreeMap<u64, Vec<&Annotation>> {
        let mut map: BTreeMap<u64, Vec<&Annotation>> =
            self.images.iter().map(|img| (img.id, Vec::new())).collect();
        for ann in &self.annotations {
            map.entry(ann.image_id).or_default().push(ann);
        }
        map
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn max_image_id(&self) -> u64 {
        self.images.iter().map(|i| i.id).max().unwrap_or(0)
    }

    pub fn max_annotation_id(&self) -> u64 {
        self.annotations.iter().map(|a| a.id).max().unwrap_or(0)
    }

    /// Keeps only the given images and the annotations that belong to them.
    pub fn subset(&self, keep: &BTreeSet<u64>) -> Dataset {
        let images: Vec<_> = self.images.iter().filter(|i| keep.contains(&i.id)).cloned().collect();
        let annotations: Vec<_> =
            self.annotations.iter().filter(|a| keep.contains(&a.image_id)).cloned().collect();
        Dataset::new(images, annotations, self.categories.clone())
            .expect("subset of a valid dataset is valid")
    }

    /// Image-level train/val partition; annotations follow their image.
    pub fn split(&self, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
        SplitSpec::new(spec.val_fraction, spec.seed)?;
        let n = self.images.len();
        let n_val = (spec.val_fraction * n as f64).round() as usize;
        if n == 0 || n_val == 0 || n_val >= n {
            return Err(Error::EmptySplit { val_fraction: spec.val_fraction, images: n });
        }
        let mut ids: Vec<u64> = self.images.iter().map(|i| i.id).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        ids.shuffle(&mut rng);
        let val: BTreeSet<u64> = ids[..n_val].iter().copied().collect();
        let train: BTreeSet<u64> = ids[n_val..].iter().copied().collect();
        Ok((self.subset(&train), self.subset(&val)))
    }

    /// Instance count per category; categories without annotations map to 0.
    pub fn class_stats(&self) -> BTreeMap<u64, usize> {
        let mut counts: BTreeMap<u64, usize> = self.categories.iter().map(|c| (c.id, 0)).collect();
        for ann in &self.annotations {
            *counts.entry(ann.category_id).or_default() += 1;
        }
        counts
    }
}

fn bbox_in_bounds(b: &BBox<f64>, width: u32, height: u32) -> bool {
    b.w > 0.0
        && b.h > 0.0
        && b.x >= 0.0
        && b.y >= 0.0
        && b.x2() <= width as f64
        && b.y2() <= height as f64
}

/// Pulls a box inside `width x height`. Returns `None` if nothing remains.
pub fn clamp_bbox(b: &BBox<f64>, width: u32, height: u32) -> Option<BBox<f64>> {
    let x = b.x.max(0.0);
    let y = b.y.max(0.0);
    let x2 = b.x2().min(width as f64);
    let y2 = b.y2().min(height as f64);
    (x2 > x && y2 > y).then(|| BBox::new(x, y, x2 - x, y2 - y))
}

#[derive(Debug)]
pub enum CocoParseError {
    Json(serde_json::Error),
    Invalid(Error),
}

impl From<CocoParseError> for Error {
    fn from(e: CocoParseError) -> Self {
        match e {
            CocoParseError::Json(source) => Error::json("<memory>", source),
            CocoParseError::Invalid(e) => e,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoDocument {
    images: Vec<ImageRecord>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<Category>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: BBox<f64>,
    #[serde(default)]
    area: Option<f64>,
    #[serde(default)]
    iscrowd: Option<u8>,
    #[serde(default, skip_serializing_if = "Provenance::is_real")]
    provenance: Provenance,
}

impl CocoDocument {
    fn into_dataset(self) -> Result<(Dataset, Vec<ClampEvent>)> {
        let dims: BTreeMap<u64, (u32, u32)> =
            self.images.iter().map(|i| (i.id, (i.width, i.height))).collect();
        let mut clamped = Vec::new();
        let mut annotations = Vec::with_capacity(self.annotations.len());
        for a in self.annotations {
            let mut bbox = a.bbox;
            if let Some(&(w, h)) = dims.get(&a.image_id) {
                if !bbox_in_bounds(&bbox, w, h) {
                    let after = clamp_bbox(&bbox, w, h).ok_or(Error::BoxOutOfBounds { annotation: a.id })?;
                    log::warn!("annotation {} bbox clamped into image {}", a.id, a.image_id);
                    clamped.push(ClampEvent { annotation_id: a.id, before: bbox, after });
                    bbox = after;
                }
            }
            // dangling image ids fall through to Dataset::new, which reports them
            annotations.push(Annotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox,
                provenance: a.provenance,
            });
        }
        let ds = Dataset::new(self.images, annotations, self.categories)?;
        Ok((ds, clamped))
    }
}

impl From<&Dataset> for CocoDocument {
    fn from(ds: &Dataset) -> Self {
        CocoDocument {
            images: ds.images.clone(),
            annotations: ds
                .annotations
                .iter()
                .map(|a| CocoAnnotation {
                    id: a.id,
                    image_id: a.image_id,
                    category_id: a.category_id,
                    bbox: a.bbox,
                    area: Some(a.bbox.area()),
                    iscrowd: Some(0),
                    provenance: a.provenance.clone(),
                })
                .collect(),
            categories: ds.categories.clone(),
        }
    }
}

/// Result of [`load_dataset`]: the dataset plus everything worth warning about.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub image_root: PathBuf,
    pub clamped: Vec<ClampEvent>,
    pub unreadable_images: Vec<PathBuf>,
}

/// Reads and validates an annotation document. With `strict`, every image
/// file under `image_root` must exist and have a readable header.
pub fn load_dataset(path: &Path, image_root: &Path, strict: bool) -> Result<LoadedDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (dataset, clamped) = Dataset::from_coco_str(&text).map_err(|e| match e {
        CocoParseError::Json(source) => Error::json(path, source),
        CocoParseError::Invalid(e) => e,
    })?;
    let mut unreadable = Vec::new();
    for img in dataset.images() {
        let file = image_root.join(&img.file_name);
        match image::image_dimensions(&file) {
            Ok(_) => {}
            Err(source) if strict => return Err(Error::image(file, source)),
            Err(_) => {
                log::warn!("image file {} is unreadable", file.display());
                unreadable.push(file);
            }
        }
    }
    Ok(LoadedDataset { dataset, image_root: image_root.to_path_buf(), clamped, unreadable_images: unreadable })
}
