//! End-to-end runs: per-strategy inpainting augmentation, edge-conditioned
//! object replacement, class balancing and manifest emission.
//!
//! Every item (image, annotation or balance chunk) gets its own seed hashed
//! from the global seed and its ids, so results do not depend on worker
//! scheduling. Outputs are named by a hash of everything that determines
//! them; rerunning into the same directory skips finished items.

pub mod manifest;
pub mod prompt;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{imageops, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{gradient_magnitude, local_entropy, to_grayscale, ScalarMap, DEFAULT_ENTROPY_WINDOW};
use crate::backend::{BackendConfig, GenerationBackend, GenerationRequest, DEFAULT_GUIDANCE, DEFAULT_STEPS};
use crate::balance::AugmentationPlan;
use crate::compositor::{self, composite_masked, context_fill, place_on_canvas, BlendSpec, PlacementSpec};
use crate::dataset::{Annotation, Category, Dataset, ImageRecord, Provenance};
use crate::error::{Error, Result};
use crate::geometry::{BBox, PixelRect};
use crate::io;
use crate::mask::{self, contiguity_ratio, Mask, OpbgConfig, StrategyKind};

pub use manifest::{emit_manifests, DatasetRef, Manifest, TrainingScheme};
pub use prompt::{prompt_for, PromptTemplate};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const REPORT_FILE: &str = "report.txt";
pub const RUN_HEADER_FILE: &str = "run.json";
pub const IMAGES_DIR: &str = "images";

const BALANCE_DOMAIN: u64 = 0xB41A_0CE5;
const IMAGE_LEVEL: u64 = u64::MAX;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one work item, independent of processing order.
pub fn item_seed(global_seed: u64, image_id: u64, annotation_id: u64) -> u64 {
    mix(mix(mix(global_seed) ^ image_id) ^ annotation_id)
}

/// Seed for image-level (context) strategies.
pub fn image_seed(global_seed: u64, image_id: u64) -> u64 {
    item_seed(global_seed, image_id, IMAGE_LEVEL)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    pub entropy_window: usize,
    pub opbg: OpbgConfig,
    pub border_margin_frac: f64,
    /// Fixed feather width; `None` uses the per-box default.
    pub feather: Option<u32>,
    pub placement: PlacementSpec,
    pub steps: u32,
    pub guidance: f32,
    pub template: PromptTemplate,
}

impl Default for StrategyParams {
    fn default() -> Self {
        StrategyParams {
            entropy_window: DEFAULT_ENTROPY_WINDOW,
            opbg: OpbgConfig::default(),
            border_margin_frac: 0.1,
            feather: None,
            placement: PlacementSpec::default(),
            steps: DEFAULT_STEPS,
            guidance: DEFAULT_GUIDANCE,
            template: PromptTemplate::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub strategy: StrategyKind,
    pub global_seed: u64,
    pub backend: BackendConfig,
    pub params: StrategyParams,
    pub output_dir: PathBuf,
    /// Worker threads; 0 means one per available core.
    pub workers: usize,
}

impl RunConfig {
    pub fn new(strategy: StrategyKind, global_seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            strategy,
            global_seed,
            backend: BackendConfig::Mock,
            params: StrategyParams::default(),
            output_dir: output_dir.into(),
            workers: 0,
        }
    }

    pub fn annotations_path(&self) -> PathBuf {
        self.output_dir.join(ANNOTATIONS_FILE)
    }
}

/// Mask statistics for one output image.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemReport {
    pub image_id: u64,
    pub output: String,
    pub masks: usize,
    /// Masked share of the whole image.
    pub masked_fraction: f64,
    /// Mean contiguity ratio over the masks generated for this image.
    pub mean_contiguity: f64,
    pub skipped_annotations: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemFailure {
    pub item: String,
    pub message: String,
    pub backend: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub title: String,
    pub items: Vec<ItemReport>,
    pub failures: Vec<ItemFailure>,
    pub resumed: usize,
    /// Balance runs: category -> (planned, emitted).
    pub class_counts: BTreeMap<u64, (u64, u64)>,
}

impl RunReport {
    pub fn has_backend_failures(&self) -> bool {
        self.failures.iter().any(|f| f.backend)
    }

    /// Plain-text report. Excludes timing and resume counts so identical
    /// runs produce identical reports.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.title);
        let _ = writeln!(out, "items: {}  failures: {}", self.items.len(), self.failures.len());
        if !self.items.is_empty() {
            let mean_frac = self.items.iter().map(|i| i.masked_fraction).sum::<f64>() / self.items.len() as f64;
            let mean_contig = self.items.iter().map(|i| i.mean_contiguity).sum::<f64>() / self.items.len() as f64;
            let _ = writeln!(out, "mean masked fraction: {mean_frac:.4}  mean contiguity: {mean_contig:.4}");
            let _ = writeln!(out, "\nimage_id\toutput\tmasks\tmasked_fraction\tcontiguity\tskipped");
            for i in &self.items {
                let skipped: Vec<String> = i.skipped_annotations.iter().map(u64::to_string).collect();
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{:.4}\t{:.4}\t{}",
                    i.image_id,
                    i.output,
                    i.masks,
                    i.masked_fraction,
                    i.mean_contiguity,
                    skipped.join(",")
                );
            }
        }
        if !self.class_counts.is_empty() {
            let _ = writeln!(out, "\ncategory_id\tplanned\temitted");
            for (cat, (planned, emitted)) in &self.class_counts {
                let _ = writeln!(out, "{cat}\t{planned}\t{emitted}");
            }
        }
        for f in &self.failures {
            let _ = writeln!(out, "FAILED {}: {}", f.item, f.message);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dataset: Dataset,
    pub report: RunReport,
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))
}

fn digest_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())[..20].to_string()
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(digest_hex(&[&bytes]))
}

/// Writes the reproducibility header: tool version, seed and full config.
pub fn write_run_header(cfg: &RunConfig, command: &str) -> Result<()> {
    #[derive(Serialize)]
    struct Header<'a> {
        tool: &'static str,
        version: &'static str,
        command: &'a str,
        seed: u64,
        config: &'a RunConfig,
    }
    let header = Header { tool: "artaug", version: env!("CARGO_PKG_VERSION"), command, seed: cfg.global_seed, config: cfg };
    let mut text = serde_json::to_string_pretty(&header).expect("header serializes");
    text.push('\n');
    io::write_atomic(&cfg.output_dir.join(RUN_HEADER_FILE), text.as_bytes())
}

fn load_source(image_root: &Path, record: &ImageRecord) -> Result<RgbImage> {
    let img = io::load_rgb(&image_root.join(&record.file_name))?;
    if img.dimensions() != (record.width, record.height) {
        return Err(Error::DimensionMismatch {
            expected: (record.width, record.height),
            actual: img.dimensions(),
            context: "source image vs annotation record",
        });
    }
    Ok(img)
}

fn crop(img: &RgbImage, r: PixelRect) -> RgbImage {
    imageops::crop_imm(img, r.x, r.y, r.w, r.h).to_image()
}

fn category_name(dataset: &Dataset, id: u64) -> &str {
    dataset.category(id).map_or("object", |c| c.name.as_str())
}

struct ImageOutcome {
    image: RgbImage,
    masks: Vec<Mask>,
    masked: Mask,
    skipped: Vec<u64>,
    provenance: HashMap<u64, Provenance>,
}

/// Builds the masks for one image: image-aligned for context strategies,
/// one crop-aligned mask per annotation for object strategies.
pub fn strategy_masks(
    strategy: StrategyKind,
    gray: &image::GrayImage,
    annotations: &[&Annotation],
    params: &StrategyParams,
    seed: u64,
) -> Result<Vec<(Option<u64>, Mask)>> {
    let (w, h) = gray.dimensions();
    let rects: Vec<PixelRect> = annotations.iter().map(|a| a.bbox.to_pixel_rect(w, h)).collect();
    match strategy {
        StrategyKind::Opbg => {
            let out = mask::mask_opbg(w, h, &rects, &params.opbg, seed)?;
            Ok(vec![(None, out.mask)])
        }
        StrategyKind::Border => {
            let mut ring = Mask::empty_image(w, h);
            for r in &rects {
                ring.union_with(&mask::mask_border(*r, w, h, params.border_margin_frac)?);
            }
            for r in &rects {
                ring.fill_rect(*r, false);
            }
            Ok(vec![(None, ring)])
        }
        StrategyKind::Edge => Err(Error::param("EDGE produces no masks; use run_edge_replacement")),
        object => {
            let map: ScalarMap<f32> = if object.uses_entropy() {
                local_entropy(gray, params.entropy_window)?
            } else {
                gradient_magnitude(gray)?
            };
            let mut out = Vec::with_capacity(annotations.len());
            for (ann, rect) in annotations.iter().zip(&rects) {
                if rect.w < 2 || rect.h < 2 {
                    continue;
                }
                let m = match object {
                    StrategyKind::Adapt => mask::mask_adapt(&map, *rect)?,
                    StrategyKind::EntH => mask::mask_ent_h(&map, *rect)?,
                    StrategyKind::EntL => mask::mask_ent_l(&map, *rect)?,
                    StrategyKind::SalH => mask::mask_sal_h(&map, *rect)?,
                    StrategyKind::SalL => mask::mask_sal_l(&map, *rect)?,
                    _ => unreachable!("context strategies handled above"),
                };
                out.push((Some(ann.id), m));
            }
            Ok(out)
        }
    }
}

fn inpaint_image(
    dataset: &Dataset,
    record: &ImageRecord,
    annotations: &[&Annotation],
    source: &RgbImage,
    cfg: &RunConfig,
    backend: Option<&dyn GenerationBackend>,
) -> Result<ImageOutcome> {
    let (w, h) = source.dimensions();
    let gray = to_grayscale(source);
    let params = &cfg.params;
    let img_seed = image_seed(cfg.global_seed, record.id);
    let masks = strategy_masks(cfg.strategy, &gray, annotations, params, img_seed)?;
    let mut provenance = HashMap::new();
    let mut skipped: Vec<u64> = annotations.iter().map(|a| a.id).collect();
    let mut masked = Mask::empty_image(w, h);
    let mut working = source.clone();

    for (ann_id, m) in &masks {
        masked.union_with(&m.to_image_frame(w, h));
        let seed = ann_id.map_or(img_seed, |id| item_seed(cfg.global_seed, record.id, id));
        if let Some(id) = ann_id {
            skipped.retain(|s| s != id);
            provenance.insert(*id, Provenance::synthetic(cfg.strategy, seed));
        }
        let Some(backend) = backend else { continue };
        if m.is_empty() {
            continue;
        }
        match (ann_id, m.frame()) {
            (Some(id), mask::MaskFrame::Crop(rect)) => {
                let ann = annotations.iter().find(|a| a.id == *id).expect("mask belongs to an annotation");
                let (pos, neg) = params.template.render(category_name(dataset, ann.category_id))?;
                let region = crop(&working, rect);
                let req = GenerationRequest::inpaint(region.clone(), m.clone(), pos, neg, seed)
                    .with_sampler(params.steps, params.guidance);
                let generated = backend.inpaint(&req)?;
                let patched = composite_masked(&region, &generated.image, m);
                imageops::replace(&mut working, &patched, rect.x as i64, rect.y as i64);
            }
            _ => {
                let mut names: Vec<&str> = annotations.iter().map(|a| category_name(dataset, a.category_id)).collect();
                names.sort_unstable();
                names.dedup();
                let req = GenerationRequest::inpaint(
                    working.clone(),
                    m.clone(),
                    compositor::background_prompt(&names),
                    params.template.negative.clone(),
                    seed,
                )
                .with_sampler(params.steps, params.guidance);
                let generated = backend.inpaint(&req)?;
                working = composite_masked(&working, &generated.image, m);
            }
        }
    }
    if !cfg.strategy.is_object_level() {
        for a in annotations {
            provenance.insert(a.id, Provenance::synthetic(cfg.strategy, img_seed));
        }
        skipped.clear();
    }
    Ok(ImageOutcome { image: working, masks: masks.into_iter().map(|(_, m)| m).collect(), masked, skipped, provenance })
}

fn edge_replace_image(
    dataset: &Dataset,
    record: &ImageRecord,
    annotations: &[&Annotation],
    source: &RgbImage,
    cfg: &RunConfig,
    backend: Option<&dyn GenerationBackend>,
) -> Result<ImageOutcome> {
    let (w, h) = source.dimensions();
    let params = &cfg.params;
    let mut working = source.clone();
    let mut provenance = HashMap::new();
    let mut masked = Mask::empty_image(w, h);
    let mut masks = Vec::new();
    for ann in annotations {
        let rect = ann.bbox.to_pixel_rect(w, h);
        let seed = item_seed(cfg.global_seed, record.id, ann.id);
        provenance.insert(ann.id, Provenance::synthetic(StrategyKind::Edge, seed));
        let mut m = Mask::empty_image(w, h);
        m.fill_rect(rect, true);
        masked.union_with(&m);
        masks.push(m);
        let Some(backend) = backend else { continue };
        let (pos, neg) = params.template.render(category_name(dataset, ann.category_id))?;
        let edges = backend.extract_edges(&crop(source, rect))?;
        let req = GenerationRequest::edge_conditioned(edges, pos, neg, seed).with_sampler(params.steps, params.guidance);
        let generated = backend.generate_from_edges(&req)?;
        let spec = match params.feather {
            Some(f) => BlendSpec { feather_width: f.min(rect.w.min(rect.h) / 2) },
            None => BlendSpec::default_for(rect),
        };
        working = compositor::blend_crop(&working, &generated.image, rect, spec)?;
    }
    Ok(ImageOutcome { image: working, masks, masked, skipped: Vec::new(), provenance })
}

type ImageFn = fn(
    &Dataset,
    &ImageRecord,
    &[&Annotation],
    &RgbImage,
    &RunConfig,
    Option<&dyn GenerationBackend>,
) -> Result<ImageOutcome>;

struct ProcessedImage {
    record: ImageRecord,
    annotations: Vec<Annotation>,
    report: ItemReport,
    resumed: bool,
}

fn run_per_image(
    dataset: &Dataset,
    image_root: &Path,
    cfg: &RunConfig,
    backend: &dyn GenerationBackend,
    process: ImageFn,
) -> Result<RunOutput> {
    let params_fp = serde_json::to_vec(&cfg.params).expect("params serialize");
    let by_image = dataset.annotations_by_image();
    let pool = thread_pool(cfg.workers)?;
    std::fs::create_dir_all(cfg.output_dir.join(IMAGES_DIR)).map_err(|e| Error::io(&cfg.output_dir, e))?;

    let results: Vec<std::result::Result<ProcessedImage, ItemFailure>> = pool.install(|| {
        dataset
            .images()
            .par_iter()
            .map(|record| {
                let anns = by_image.get(&record.id).cloned().unwrap_or_default();
                let fail = |e: Error| ItemFailure {
                    item: format!("image {} ({})", record.id, record.file_name),
                    backend: e.is_backend(),
                    message: e.to_string(),
                };
                let src_path = image_root.join(&record.file_name);
                let name = digest_hex(&[
                    cfg.strategy.as_str().as_bytes(),
                    &cfg.global_seed.to_le_bytes(),
                    &record.id.to_le_bytes(),
                    file_digest(&src_path).map_err(fail)?.as_bytes(),
                    &params_fp,
                    backend.id().as_bytes(),
                ]);
                let rel = format!("{IMAGES_DIR}/{name}.png");
                let out_path = cfg.output_dir.join(&rel);
                let resumed = out_path.exists();
                let source = load_source(image_root, record).map_err(fail)?;
                let outcome = process(dataset, record, &anns, &source, cfg, (!resumed).then_some(backend)).map_err(fail)?;
                if !resumed {
                    io::save_png_rgb(&out_path, &outcome.image).map_err(fail)?;
                }
                let mean_contiguity = if outcome.masks.is_empty() {
                    1.0
                } else {
                    outcome.masks.iter().map(contiguity_ratio).sum::<f64>() / outcome.masks.len() as f64
                };
                let annotations = anns
                    .iter()
                    .map(|a| Annotation {
                        provenance: outcome.provenance.get(&a.id).cloned().unwrap_or_else(|| a.provenance.clone()),
                        ..(*a).clone()
                    })
                    .collect();
                Ok(ProcessedImage {
                    record: ImageRecord { file_name: rel.clone(), ..record.clone() },
                    annotations,
                    report: ItemReport {
                        image_id: record.id,
                        output: rel,
                        masks: outcome.masks.len(),
                        masked_fraction: outcome.masked.area_fraction(),
                        mean_contiguity,
                        skipped_annotations: outcome.skipped,
                    },
                    resumed,
                })
            })
            .collect()
    });

    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut report = RunReport { title: format!("{} augmentation, seed {}", cfg.strategy, cfg.global_seed), ..Default::default() };
    for r in results {
        match r {
            Ok(p) => {
                report.resumed += p.resumed as usize;
                images.push(p.record);
                annotations.extend(p.annotations);
                report.items.push(p.report);
            }
            Err(f) => {
                log::error!("{}: {}", f.item, f.message);
                report.failures.push(f);
            }
        }
    }
    let augmented = Dataset::new(images, annotations, dataset.categories().to_vec())?;
    finish_run(cfg, &augmented, &report)?;
    Ok(RunOutput { dataset: augmented, report })
}

fn finish_run(cfg: &RunConfig, dataset: &Dataset, report: &RunReport) -> Result<()> {
    dataset.write_coco(&cfg.annotations_path())?;
    io::write_atomic(&cfg.output_dir.join(REPORT_FILE), report.to_text().as_bytes())?;
    if report.resumed > 0 {
        log::info!("resumed {} finished item(s)", report.resumed);
    }
    Ok(())
}

/// One augmented image per input image using a mask strategy.
pub fn run_inpaint_strategy(
    dataset: &Dataset,
    image_root: &Path,
    cfg: &RunConfig,
    backend: &dyn GenerationBackend,
) -> Result<RunOutput> {
    if cfg.strategy == StrategyKind::Edge {
        return Err(Error::param("EDGE is not an inpainting strategy; use run_edge_replacement"));
    }
    cfg.params.template.validate()?;
    run_per_image(dataset, image_root, cfg, backend, inpaint_image)
}

/// Replaces every annotated object with an edge-conditioned generation,
/// blended back into place. Box geometry is unchanged.
pub fn run_edge_replacement(
    dataset: &Dataset,
    image_root: &Path,
    cfg: &RunConfig,
    backend: &dyn GenerationBackend,
) -> Result<RunOutput> {
    if cfg.strategy != StrategyKind::Edge {
        return Err(Error::param(format!("edge replacement needs strategy EDGE, got {}", cfg.strategy)));
    }
    cfg.params.template.validate()?;
    run_per_image(dataset, image_root, cfg, backend, edge_replace_image)
}

/// Dispatches to the right run for `cfg.strategy`.
pub fn augment(dataset: &Dataset, image_root: &Path, cfg: &RunConfig, backend: &dyn GenerationBackend) -> Result<RunOutput> {
    if cfg.strategy == StrategyKind::Edge {
        run_edge_replacement(dataset, image_root, cfg, backend)
    } else {
        run_inpaint_strategy(dataset, image_root, cfg, backend)
    }
}

#[derive(Clone, Debug)]
struct BalanceChunk {
    category_id: u64,
    index: u64,
    /// Source annotation per crop.
    sources: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CanvasRecord {
    file: String,
    width: u32,
    height: u32,
    placements: Vec<PlacedRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PlacedRecord {
    category_id: u64,
    bbox: PixelRect,
    seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ChunkRecord {
    canvases: Vec<CanvasRecord>,
}

fn balance_chunks(dataset: &Dataset, plan: &AugmentationPlan, per_canvas: usize) -> Vec<BalanceChunk> {
    let mut by_cat: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for a in dataset.annotations() {
        by_cat.entry(a.category_id).or_default().push(a.id);
    }
    let mut chunks = Vec::new();
    for (cat, entry) in &plan.entries {
        let Some(instances) = by_cat.get(cat).filter(|v| !v.is_empty()) else { continue };
        let sources: Vec<u64> =
            (0..entry.planned_synthetic).map(|k| instances[(k % instances.len() as u64) as usize]).collect();
        for (i, group) in sources.chunks(per_canvas).enumerate() {
            chunks.push(BalanceChunk { category_id: *cat, index: i as u64, sources: group.to_vec() });
        }
    }
    chunks
}

fn load_chunk_record(dir: &Path, name: &str) -> Option<ChunkRecord> {
    let text = std::fs::read_to_string(dir.join(IMAGES_DIR).join(format!("{name}.json"))).ok()?;
    let rec: ChunkRecord = serde_json::from_str(&text).ok()?;
    rec.canvases.iter().all(|c| dir.join(&c.file).exists()).then_some(rec)
}

#[allow(clippy::too_many_arguments)]
fn generate_chunk(
    dataset: &Dataset,
    chunk: &BalanceChunk,
    chunk_seed: u64,
    name: &str,
    edges: &HashMap<u64, crate::analysis::EdgeMap<f32>>,
    cfg: &RunConfig,
    backend: &dyn GenerationBackend,
) -> Result<ChunkRecord> {
    let params = &cfg.params;
    let cat_name = category_name(dataset, chunk.category_id);
    let (pos, neg) = params.template.render(cat_name)?;
    let mut crops = Vec::with_capacity(chunk.sources.len());
    for (i, src) in chunk.sources.iter().enumerate() {
        let edge_map = edges.get(src).expect("edges precomputed for every source").clone();
        let req = GenerationRequest::edge_conditioned(edge_map, pos.clone(), neg.clone(), mix(chunk_seed ^ i as u64))
            .with_sampler(params.steps, params.guidance);
        crops.push((backend.generate_from_edges(&req)?.image, chunk.category_id));
    }
    let spec = PlacementSpec { seed: chunk_seed, ..params.placement };
    let canvases = place_on_canvas(&crops, &spec)?;
    let mut records = Vec::with_capacity(canvases.len());
    for (j, canvas) in canvases.into_iter().enumerate() {
        let filled = context_fill(&canvas.image, &canvas.background_mask, &[cat_name], backend, mix(chunk_seed ^ (0xF111 + j as u64)))?;
        let file = format!("{IMAGES_DIR}/{name}-{j}.png");
        io::save_png_rgb(&cfg.output_dir.join(&file), &filled)?;
        records.push(CanvasRecord {
            file,
            width: filled.width(),
            height: filled.height(),
            placements: canvas
                .placements
                .iter()
                .map(|p| PlacedRecord { category_id: p.category_id, bbox: p.bbox, seed: chunk_seed })
                .collect(),
        });
    }
    let rec = ChunkRecord { canvases: records };
    let text = serde_json::to_string_pretty(&rec).expect("chunk record serializes");
    io::write_atomic(&cfg.output_dir.join(IMAGES_DIR).join(format!("{name}.json")), text.as_bytes())?;
    Ok(rec)
}

/// Generates the synthetic class-balancing set for `plan`: edge-conditioned
/// crops of real instances placed on blank canvases whose backgrounds are
/// then inpainted. Each real instance is replicated `augs_per_instance`
/// times. Image and annotation ids continue after those of `dataset`.
pub fn run_balance(
    dataset: &Dataset,
    image_root: &Path,
    plan: &AugmentationPlan,
    cfg: &RunConfig,
    backend: &dyn GenerationBackend,
) -> Result<RunOutput> {
    cfg.params.template.validate()?;
    cfg.params.placement.validate()?;
    let chunks = balance_chunks(dataset, plan, cfg.params.placement.max_per_canvas);
    let params_fp = serde_json::to_vec(&cfg.params).expect("params serialize");
    let pool = thread_pool(cfg.workers)?;
    std::fs::create_dir_all(cfg.output_dir.join(IMAGES_DIR)).map_err(|e| Error::io(&cfg.output_dir, e))?;

    let named: Vec<(BalanceChunk, u64, String)> = chunks
        .into_iter()
        .map(|c| {
            let seed = item_seed(cfg.global_seed ^ BALANCE_DOMAIN, c.category_id, c.index);
            let srcs: Vec<u8> = c.sources.iter().flat_map(|s| s.to_le_bytes()).collect();
            let name = digest_hex(&[b"balance", &seed.to_le_bytes(), &srcs, &params_fp, backend.id().as_bytes()]);
            (c, seed, name)
        })
        .collect();

    let mut done: HashMap<String, ChunkRecord> = HashMap::new();
    for (_, _, name) in &named {
        if let Some(rec) = load_chunk_record(&cfg.output_dir, name) {
            done.insert(name.clone(), rec);
        }
    }
    let resumed = done.len();

    // edge maps for every source instance still needed
    let mut needed: Vec<u64> = named
        .iter()
        .filter(|(_, _, n)| !done.contains_key(n))
        .flat_map(|(c, _, _)| c.sources.iter().copied())
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let anns: HashMap<u64, &Annotation> = dataset.annotations().iter().map(|a| (a.id, a)).collect();
    let mut failures = Vec::new();
    let edge_results: Vec<(u64, Result<crate::analysis::EdgeMap<f32>>)> = pool.install(|| {
        needed
            .par_iter()
            .map(|id| {
                let ann = anns[id];
                let record = dataset.image(ann.image_id).expect("validated reference");
                let r = load_source(image_root, record).and_then(|src| {
                    let rect = ann.bbox.to_pixel_rect(src.width(), src.height());
                    backend.extract_edges(&crop(&src, rect))
                });
                (*id, r)
            })
            .collect()
    });
    let mut edges = HashMap::new();
    for (id, r) in edge_results {
        match r {
            Ok(e) => {
                edges.insert(id, e);
            }
            Err(e) => failures.push(ItemFailure { item: format!("source annotation {id}"), backend: e.is_backend(), message: e.to_string() }),
        }
    }

    let results: Vec<std::result::Result<ChunkRecord, ItemFailure>> = pool.install(|| {
        named
            .par_iter()
            .map(|(chunk, seed, name)| {
                if let Some(rec) = done.get(name) {
                    return Ok(rec.clone());
                }
                let item = format!("category {} chunk {}", chunk.category_id, chunk.index);
                if chunk.sources.iter().any(|s| !edges.contains_key(s)) {
                    return Err(ItemFailure { item, message: "source edge map unavailable".into(), backend: false });
                }
                generate_chunk(dataset, chunk, *seed, name, &edges, cfg, backend)
                    .map_err(|e| ItemFailure { item, backend: e.is_backend(), message: e.to_string() })
            })
            .collect()
    });

    let mut next_image = dataset.max_image_id() + 1;
    let mut next_ann = dataset.max_annotation_id() + 1;
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut report = RunReport {
        title: format!("class balancing, seed {}", cfg.global_seed),
        resumed,
        failures,
        ..Default::default()
    };
    for (cat, e) in &plan.entries {
        report.class_counts.insert(*cat, (e.planned_synthetic, 0));
    }
    for r in results {
        let rec = match r {
            Ok(rec) => rec,
            Err(f) => {
                log::error!("{}: {}", f.item, f.message);
                report.failures.push(f);
                continue;
            }
        };
        for canvas in rec.canvases {
            let image_id = next_image;
            next_image += 1;
            images.push(ImageRecord { id: image_id, file_name: canvas.file.clone(), width: canvas.width, height: canvas.height });
            for p in &canvas.placements {
                annotations.push(Annotation {
                    id: next_ann,
                    image_id,
                    category_id: p.category_id,
                    bbox: p.bbox.to_bbox::<f64>(),
                    provenance: Provenance::synthetic(StrategyKind::Edge, p.seed),
                });
                next_ann += 1;
                report.class_counts.entry(p.category_id).or_default().1 += 1;
            }
            report.items.push(ItemReport {
                image_id,
                output: canvas.file,
                masks: 1,
                masked_fraction: 1.0
                    - canvas.placements.iter().map(|p| p.bbox.area()).sum::<u64>() as f64
                        / (canvas.width as f64 * canvas.height as f64),
                mean_contiguity: 1.0,
                skipped_annotations: Vec::new(),
            });
        }
    }
    let categories: Vec<Category> = dataset.categories().to_vec();
    let synthetic = Dataset::new(images, annotations, categories)?;
    finish_run(cfg, &synthetic, &report)?;
    Ok(RunOutput { dataset: synthetic, report })
}

/// Image-aligned union of a strategy's masks for every image, without
/// calling a backend. Used for inspection.
pub fn preview_masks(dataset: &Dataset, image_root: &Path, cfg: &RunConfig) -> Result<Vec<(u64, Mask, RunReportRow)>> {
    let by_image = dataset.annotations_by_image();
    let mut out = Vec::new();
    for record in dataset.images() {
        let anns = by_image.get(&record.id).cloned().unwrap_or_default();
        let source = load_source(image_root, record)?;
        let outcome = match cfg.strategy {
            StrategyKind::Edge => edge_replace_image(dataset, record, &anns, &source, cfg, None)?,
            _ => inpaint_image(dataset, record, &anns, &source, cfg, None)?,
        };
        let contiguity = if outcome.masks.is_empty() {
            1.0
        } else {
            outcome.masks.iter().map(contiguity_ratio).sum::<f64>() / outcome.masks.len() as f64
        };
        out.push((
            record.id,
            outcome.masked.clone(),
            RunReportRow { masks: outcome.masks.len(), masked_fraction: outcome.masked.area_fraction(), contiguity },
        ));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunReportRow {
    pub masks: usize,
    pub masked_fraction: f64,
    pub contiguity: f64,
}

/// Boxes of `dataset` as continuous boxes, for geometry comparisons.
pub fn boxes_by_id(dataset: &Dataset) -> BTreeMap<u64, BBox<f64>> {
    dataset.annotations().iter().map(|a| (a.id, a.bbox)).collect()
}
