//! Re-integration of generated content: feathered blend-back, blank-canvas
//! placement and the contextual background fill.

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{GenerationBackend, GenerationRequest};
use crate::dataset::Provenance;
use crate::error::{Error, Result};
use crate::geometry::PixelRect;
use crate::mask::{Mask, StrategyKind};

pub const CANVAS_COLOR: Rgb<u8> = Rgb([240, 240, 240]);
pub const DEFAULT_CANVAS_SIZE: (u32, u32) = (512, 512);
pub const PLACEMENT_ATTEMPTS: u32 = 50;
pub const BACKGROUND_PROMPT: &str = "oil painting background scene on canvas";
pub const NEGATIVE_PROMPT: &str = "bad anatomy, bad structure";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlendSpec {
    pub feather_width: u32,
}

impl BlendSpec {
    /// 5% of the shorter bbox side, at least 2 px, capped at half that side.
    pub fn default_for(bbox: PixelRect) -> Self {
        let short = bbox.w.min(bbox.h);
        let feather = ((0.05 * short as f64).round() as u32).max(2).min(short / 2);
        BlendSpec { feather_width: feather }
    }
}

/// Blend weight of the generated pixel at local offset `(lx, ly)` inside a
/// `w x h` box: ramps linearly from the boundary inward.
pub fn feather_alpha(lx: u32, ly: u32, w: u32, h: u32, feather: u32) -> f32 {
    if feather == 0 {
        return 1.0;
    }
    let d = (lx + 1).min(ly + 1).min(w - lx).min(h - ly);
    (d as f32 / feather as f32).min(1.0)
}

/// Pastes `generated` over `bbox` of `base` with a linear feather. Pixels
/// outside `bbox` are untouched.
pub fn blend_crop(base: &RgbImage, generated: &RgbImage, bbox: PixelRect, spec: BlendSpec) -> Result<RgbImage> {
    if generated.dimensions() != (bbox.w, bbox.h) {
        return Err(Error::DimensionMismatch {
            expected: (bbox.w, bbox.h),
            actual: generated.dimensions(),
            context: "generated crop vs bbox",
        });
    }
    if !bbox.fits_within(base.width(), base.height()) {
        return Err(Error::param(format!("bbox {bbox:?} exceeds base {}x{}", base.width(), base.height())));
    }
    if spec.feather_width > bbox.w.min(bbox.h) / 2 {
        return Err(Error::param(format!(
            "feather {} exceeds half the shorter side of {}x{}",
            spec.feather_width, bbox.w, bbox.h
        )));
    }
    let mut out = base.clone();
    for ly in 0..bbox.h {
        for lx in 0..bbox.w {
            let a = feather_alpha(lx, ly, bbox.w, bbox.h, spec.feather_width);
            let g = generated.get_pixel(lx, ly);
            let (x, y) = (bbox.x + lx, bbox.y + ly);
            let b = base.get_pixel(x, y);
            let px = [0, 1, 2].map(|c| (a * g[c] as f32 + (1.0 - a) * b[c] as f32).round() as u8);
            out.put_pixel(x, y, Rgb(px));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementSpec {
    pub canvas_size: (u32, u32),
    /// Upper bound on a placed crop's extent relative to the canvas.
    pub max_object_frac: f64,
    /// Keep-out margin relative to each canvas side.
    pub margin_frac: f64,
    pub seed: u64,
    /// Crops packed per canvas before opening a new one.
    pub max_per_canvas: usize,
}

impl Default for PlacementSpec {
    fn default() -> Self {
        PlacementSpec {
            canvas_size: DEFAULT_CANVAS_SIZE,
            max_object_frac: 0.7,
            margin_frac: 0.02,
            seed: 0,
            max_per_canvas: 1,
        }
    }
}

impl PlacementSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_object_frac > 0.0 && self.max_object_frac < 1.0) {
            return Err(Error::param(format!("max_object_frac must be in (0,1), got {}", self.max_object_frac)));
        }
        if !(self.margin_frac >= 0.0 && self.margin_frac < 0.5) {
            return Err(Error::param(format!("margin_frac must be in [0,0.5), got {}", self.margin_frac)));
        }
        if self.canvas_size.0 == 0 || self.canvas_size.1 == 0 || self.max_per_canvas == 0 {
            return Err(Error::param("canvas size and max_per_canvas must be positive"));
        }
        Ok(())
    }

    pub fn margins(&self) -> (u32, u32) {
        let (w, h) = self.canvas_size;
        ((self.margin_frac * w as f64).round() as u32, (self.margin_frac * h as f64).round() as u32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    /// Index into the input crop list.
    pub crop_index: usize,
    pub category_id: u64,
    pub bbox: PixelRect,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Canvas {
    pub image: RgbImage,
    pub placements: Vec<Placement>,
    /// Complement of the union of placed boxes.
    pub background_mask: Mask,
}

fn fit_to_canvas(crop: &RgbImage, spec: &PlacementSpec) -> RgbImage {
    let (cw, ch) = spec.canvas_size;
    let max_w = ((spec.max_object_frac * cw as f64).floor() as u32).max(1);
    let max_h = ((spec.max_object_frac * ch as f64).floor() as u32).max(1);
    let (w, h) = crop.dimensions();
    if w <= max_w && h <= max_h {
        return crop.clone();
    }
    let s = (max_w as f64 / w as f64).min(max_h as f64 / h as f64);
    let nw = ((w as f64 * s).floor() as u32).clamp(1, max_w);
    let nh = ((h as f64 * s).floor() as u32).clamp(1, max_h);
    imageops::resize(crop, nw, nh, FilterType::Triangle)
}

struct OpenCanvas {
    image: RgbImage,
    placements: Vec<Placement>,
}

impl OpenCanvas {
    fn new(size: (u32, u32)) -> Self {
        OpenCanvas { image: RgbImage::from_pixel(size.0, size.1, CANVAS_COLOR), placements: Vec::new() }
    }

    fn finish(self) -> Canvas {
        let (w, h) = self.image.dimensions();
        let mut background = Mask::full_image(w, h);
        for p in &self.placements {
            background.fill_rect(p.bbox, false);
        }
        Canvas { image: self.image, placements: self.placements, background_mask: background }
    }
}

/// Places crops on neutral canvases at seeded positions without overlap.
/// A crop that finds no free spot within the attempt budget opens a new
/// canvas.
pub fn place_on_canvas(crops: &[(RgbImage, u64)], spec: &PlacementSpec) -> Result<Vec<Canvas>> {
    spec.validate()?;
    let (cw, ch) = spec.canvas_size;
    let (mx, my) = spec.margins();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut done = Vec::new();
    let mut open = OpenCanvas::new(spec.canvas_size);

    for (index, (crop, category)) in crops.iter().enumerate() {
        let fitted = fit_to_canvas(crop, spec);
        let (w, h) = fitted.dimensions();
        if w + 2 * mx > cw || h + 2 * my > ch {
            return Err(Error::param(format!("crop {index} ({w}x{h}) does not fit a {cw}x{ch} canvas with margins")));
        }
        if open.placements.len() >= spec.max_per_canvas {
            done.push(std::mem::replace(&mut open, OpenCanvas::new(spec.canvas_size)).finish());
        }
        let sample = |rng: &mut ChaCha8Rng| {
            let x = rng.random_range(mx..=cw - mx - w);
            let y = rng.random_range(my..=ch - my - h);
            PixelRect::new(x, y, w, h)
        };
        let mut chosen = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let r = sample(&mut rng);
            if open.placements.iter().all(|p| !p.bbox.intersects(&r)) {
                chosen = Some(r);
                break;
            }
        }
        let rect = match chosen {
            Some(r) => r,
            None => {
                done.push(std::mem::replace(&mut open, OpenCanvas::new(spec.canvas_size)).finish());
                sample(&mut rng)
            }
        };
        imageops::replace(&mut open.image, &fitted, rect.x as i64, rect.y as i64);
        open.placements.push(Placement {
            crop_index: index,
            category_id: *category,
            bbox: rect,
            provenance: Provenance::synthetic(StrategyKind::Edge, spec.seed),
        });
    }
    if !open.placements.is_empty() {
        done.push(open.finish());
    }
    Ok(done)
}

pub fn background_prompt(class_names: &[&str]) -> String {
    if class_names.is_empty() {
        BACKGROUND_PROMPT.to_string()
    } else {
        format!("{BACKGROUND_PROMPT}, {}", class_names.join(", "))
    }
}

/// Replaces masked pixels of `dst` with those of `generated`.
pub(crate) fn composite_masked(dst: &RgbImage, generated: &RgbImage, mask: &Mask) -> RgbImage {
    let mut out = dst.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        if mask.get(x, y) {
            *p = *generated.get_pixel(x, y);
        }
    }
    out
}

/// Inpaints the canvas background around placed objects. Only masked
/// pixels are taken from the backend output.
pub fn context_fill(
    image: &RgbImage,
    background_mask: &Mask,
    class_names: &[&str],
    backend: &dyn GenerationBackend,
    seed: u64,
) -> Result<RgbImage> {
    if (background_mask.width(), background_mask.height()) != image.dimensions() {
        return Err(Error::DimensionMismatch {
            expected: image.dimensions(),
            actual: (background_mask.width(), background_mask.height()),
            context: "background mask",
        });
    }
    if background_mask.is_empty() {
        return Ok(image.clone());
    }
    let req = GenerationRequest::inpaint(
        image.clone(),
        background_mask.clone(),
        background_prompt(class_names),
        NEGATIVE_PROMPT,
        seed,
    );
    let generated = backend.inpaint(&req)?;
    Ok(composite_masked(image, &generated.image, background_mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;

    fn gradient(w: u32, h: u32, k: u8) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 3) as u8 ^ k, (y * 5) as u8, k]))
    }

    #[test]
    fn hard_paste_with_zero_feather() {
        let base = gradient(30, 30, 1);
        let gen = gradient(10, 8, 200);
        let r = PixelRect::new(5, 6, 10, 8);
        let out = blend_crop(&base, &gen, r, BlendSpec { feather_width: 0 }).unwrap();
        for (x, y, p) in out.enumerate_pixels() {
            if r.contains(x, y) {
                assert_eq!(p, gen.get_pixel(x - 5, y - 6));
            } else {
                assert_eq!(p, base.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn identical_sources_are_fixed_point() {
        let base = gradient(30, 30, 7);
        let r = PixelRect::new(4, 4, 20, 12);
        let crop = imageops::crop_imm(&base, 4, 4, 20, 12).to_image();
        for f in [0, 2, 6] {
            assert_eq!(blend_crop(&base, &crop, r, BlendSpec { feather_width: f }).unwrap(), base);
        }
    }

    #[test]
    fn boundary_ring_alpha() {
        assert_eq!(feather_alpha(0, 5, 20, 20, 4), 0.25);
        assert_eq!(feather_alpha(19, 5, 20, 20, 4), 0.25);
        assert_eq!(feather_alpha(1, 5, 20, 20, 4), 0.5);
        assert_eq!(feather_alpha(10, 10, 20, 20, 4), 1.0);

        let base = RgbImage::from_pixel(20, 20, Rgb([0, 0, 0]));
        let gen = RgbImage::from_pixel(20, 20, Rgb([200, 100, 40]));
        let out = blend_crop(&base, &gen, PixelRect::new(0, 0, 20, 20), BlendSpec { feather_width: 4 }).unwrap();
        assert_eq!(out.get_pixel(0, 10).0, [50, 25, 10]);
    }

    #[test]
    fn blend_rejects_bad_inputs() {
        let base = gradient(10, 10, 0);
        let r = PixelRect::new(0, 0, 4, 4);
        assert!(blend_crop(&base, &gradient(3, 4, 0), r, BlendSpec { feather_width: 0 }).is_err());
        assert!(blend_crop(&base, &gradient(4, 4, 0), r, BlendSpec { feather_width: 3 }).is_err());
        assert!(blend_crop(&base, &gradient(4, 4, 0), PixelRect::new(8, 8, 4, 4), BlendSpec { feather_width: 0 }).is_err());
    }

    #[test]
    fn default_feather() {
        assert_eq!(BlendSpec::default_for(PixelRect::new(0, 0, 200, 100)).feather_width, 5);
        assert_eq!(BlendSpec::default_for(PixelRect::new(0, 0, 10, 10)).feather_width, 2);
        assert_eq!(BlendSpec::default_for(PixelRect::new(0, 0, 3, 10)).feather_width, 1);
    }

    #[test]
    fn single_crop_placement_bounds() {
        let spec = PlacementSpec { seed: 17, ..PlacementSpec::default() };
        let canvases = place_on_canvas(&[(gradient(100, 100, 3), 4)], &spec).unwrap();
        assert_eq!(canvases.len(), 1);
        let p = &canvases[0].placements[0];
        let (mx, my) = spec.margins();
        assert_eq!((p.bbox.w, p.bbox.h), (100, 100));
        assert!(p.bbox.x >= mx && p.bbox.x <= 512 - mx - 100);
        assert!(p.bbox.y >= my && p.bbox.y <= 512 - my - 100);
        assert_eq!(p.provenance, Provenance::synthetic("EDGE", 17));
        assert!(!canvases[0].background_mask.intersects_rect(p.bbox));
        assert_eq!(canvases[0].background_mask.count() as u64, 512 * 512 - 100 * 100);
    }

    #[test]
    fn oversized_crop_is_scaled() {
        let spec = PlacementSpec { canvas_size: (100, 100), max_object_frac: 0.5, ..PlacementSpec::default() };
        let c = place_on_canvas(&[(gradient(200, 100, 3), 1)], &spec).unwrap();
        assert_eq!((c[0].placements[0].bbox.w, c[0].placements[0].bbox.h), (50, 25));
    }

    #[test]
    fn placement_seed_determinism() {
        let crops: Vec<_> = (0..6).map(|i| (gradient(40, 30, i), i as u64)).collect();
        let spec = PlacementSpec { max_per_canvas: 6, seed: 1, ..PlacementSpec::default() };
        let a = place_on_canvas(&crops, &spec).unwrap();
        let b = place_on_canvas(&crops, &spec).unwrap();
        assert_eq!(a, b);
        let c = place_on_canvas(&crops, &PlacementSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(a[0].placements, c[0].placements);
        for canvas in &a {
            for (i, p) in canvas.placements.iter().enumerate() {
                for q in &canvas.placements[i + 1..] {
                    assert!(!p.bbox.intersects(&q.bbox));
                }
            }
        }
    }

    #[test]
    fn crowded_canvas_defers() {
        let crops: Vec<_> = (0..4).map(|i| (gradient(60, 60, i), 1)).collect();
        let spec = PlacementSpec { canvas_size: (100, 100), max_object_frac: 0.9, max_per_canvas: 10, ..PlacementSpec::default() };
        let canvases = place_on_canvas(&crops, &spec).unwrap();
        assert_eq!(canvases.iter().map(|c| c.placements.len()).sum::<usize>(), 4);
        assert!(canvases.len() >= 2);
    }

    #[test]
    fn context_fill_preserves_objects() {
        let spec = PlacementSpec { canvas_size: (96, 96), ..PlacementSpec::default() };
        let canvas = place_on_canvas(&[(gradient(30, 20, 9), 1)], &spec).unwrap().remove(0);
        let filled = context_fill(&canvas.image, &canvas.background_mask, &["rose"], &MockBackend, 5).unwrap();
        let r = canvas.placements[0].bbox;
        let mut changed = 0;
        for (x, y, p) in filled.enumerate_pixels() {
            if r.contains(x, y) {
                assert_eq!(p, canvas.image.get_pixel(x, y));
            } else if p != canvas.image.get_pixel(x, y) {
                changed += 1;
            }
        }
        assert!(changed as f64 >= 0.01 * canvas.background_mask.count() as f64);

        let empty = Mask::empty_image(96, 96);
        assert_eq!(context_fill(&canvas.image, &empty, &[], &MockBackend, 5).unwrap(), canvas.image);
    }

    #[test]
    fn background_prompt_lists_classes() {
        assert_eq!(background_prompt(&["rose", "pipe"]), "oil painting background scene on canvas, rose, pipe");
        assert_eq!(background_prompt(&[]), BACKGROUND_PROMPT);
    }
}
