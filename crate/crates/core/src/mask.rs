//! Inpainting mask strategies and contiguity diagnostics.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::ScalarMap;
use crate::error::{Error, Result};
use crate::geometry::PixelRect;
use crate::num::Scalar;

/// Coordinate frame a mask is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskFrame {
    Image,
    Crop(PixelRect),
}

/// Binary raster; `true` marks pixels to regenerate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
    frame: MaskFrame,
}

impl Mask {
    pub fn empty_image(width: u32, height: u32) -> Self {
        Mask { width, height, bits: vec![false; width as usize * height as usize], frame: MaskFrame::Image }
    }

    pub fn full_image(width: u32, height: u32) -> Self {
        Mask { width, height, bits: vec![true; width as usize * height as usize], frame: MaskFrame::Image }
    }

    pub fn empty_crop(rect: PixelRect) -> Self {
        Mask { width: rect.w, height: rect.h, bits: vec![false; rect.area() as usize], frame: MaskFrame::Crop(rect) }
    }

    pub fn from_fn(width: u32, height: u32, frame: MaskFrame, f: impl Fn(u32, u32) -> bool) -> Result<Self> {
        if let MaskFrame::Crop(r) = frame {
            if (r.w, r.h) != (width, height) {
                return Err(Error::DimensionMismatch {
                    expected: (r.w, r.h),
                    actual: (width, height),
                    context: "crop-aligned mask",
                });
            }
        }
        let bits = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Ok(Mask { width, height, bits, frame })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn frame(&self) -> MaskFrame {
        self.frame
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn area_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn fill_rect(&mut self, r: PixelRect, v: bool) {
        for y in r.y..r.y2().min(self.height) {
            for x in r.x..r.x2().min(self.width) {
                self.set(x, y, v);
            }
        }
    }

    /// True if any pixel inside `r` (image coordinates for image-aligned
    /// masks) is set.
    pub fn intersects_rect(&self, r: PixelRect) -> bool {
        (r.y..r.y2().min(self.height)).any(|y| (r.x..r.x2().min(self.width)).any(|x| self.get(x, y)))
    }

    /// Bounding rectangle of the set pixels, in mask coordinates.
    pub fn bounding_rect(&self) -> Option<PixelRect> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != u32::MAX).then(|| PixelRect::new(x0, y0, x1 - x0, y1 - y0))
    }

    /// Re-expresses a crop-aligned mask in a `width x height` image frame.
    pub fn to_image_frame(&self, width: u32, height: u32) -> Mask {
        match self.frame {
            MaskFrame::Image => self.clone(),
            MaskFrame::Crop(r) => {
                let mut out = Mask::empty_image(width, height);
                for y in 0..r.h {
                    for x in 0..r.w {
                        if self.get(x, y) && r.x + x < width && r.y + y < height {
                            out.set(r.x + x, r.y + y, true);
                        }
                    }
                }
                out
            }
        }
    }

    /// Union in place; both masks must share dimensions.
    pub fn union_with(&mut self, other: &Mask) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    /// 0 = keep, 255 = regenerate.
    pub fn to_gray_image(&self) -> GrayImage {
        crate::io::gray_from_fn(self.width, self.height, |x, y| if self.get(x, y) { 255 } else { 0 })
    }

    /// Threshold at 128, image-aligned.
    pub fn from_gray_image(img: &GrayImage) -> Mask {
        Mask {
            width: img.width(),
            height: img.height(),
            bits: img.pixels().map(|p| p[0] >= 128).collect(),
            frame: MaskFrame::Image,
        }
    }
}

/// Strategy shorthands; `EDGE` is the edge-conditioned replacement pipeline
/// and produces no mask of its own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "ADAPT")]
    Adapt,
    #[serde(rename = "ENT-H")]
    EntH,
    #[serde(rename = "ENT-L")]
    EntL,
    #[serde(rename = "SAL-H")]
    SalH,
    #[serde(rename = "SAL-L")]
    SalL,
    #[serde(rename = "OPBG")]
    Opbg,
    #[serde(rename = "BORDER")]
    Border,
    #[serde(rename = "EDGE")]
    Edge,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::Adapt,
        StrategyKind::EntH,
        StrategyKind::EntL,
        StrategyKind::SalH,
        StrategyKind::SalL,
        StrategyKind::Opbg,
        StrategyKind::Border,
        StrategyKind::Edge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Adapt => "ADAPT",
            StrategyKind::EntH => "ENT-H",
            StrategyKind::EntL => "ENT-L",
            StrategyKind::SalH => "SAL-H",
            StrategyKind::SalL => "SAL-L",
            StrategyKind::Opbg => "OPBG",
            StrategyKind::Border => "BORDER",
            StrategyKind::Edge => "EDGE",
        }
    }

    /// Object strategies mask inside each annotation crop.
    pub fn is_object_level(self) -> bool {
        matches!(
            self,
            StrategyKind::Adapt | StrategyKind::EntH | StrategyKind::EntL | StrategyKind::SalH | StrategyKind::SalL
        )
    }

    pub fn uses_entropy(self) -> bool {
        matches!(self, StrategyKind::Adapt | StrategyKind::EntH | StrategyKind::EntL)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('_', "-");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::param(format!("unknown strategy {s:?}")))
    }
}

fn check_bbox<T: Scalar>(map: &ScalarMap<T>, bbox: PixelRect) -> Result<()> {
    if bbox.w < 2 || bbox.h < 2 {
        return Err(Error::DegenerateBox { w: bbox.w as f64, h: bbox.h as f64, context: "mask strategies need 2x2" });
    }
    if !bbox.fits_within(map.width(), map.height()) {
        return Err(Error::param(format!("bbox {bbox:?} exceeds map {}x{}", map.width(), map.height())));
    }
    Ok(())
}

/// Median of the map values inside `bbox` (mean of the two middle values
/// for even counts).
pub fn region_median<T: Scalar>(map: &ScalarMap<T>, bbox: PixelRect) -> T {
    let mut vals: Vec<T> = map.region(bbox).collect();
    let n = vals.len();
    let cmp = |a: &T, b: &T| a.partial_cmp(b).expect("scalar maps hold no NaN");
    let (_, &mut hi, _) = vals.select_nth_unstable_by(n / 2, cmp);
    if n % 2 == 1 {
        hi
    } else {
        let lo = vals[..n / 2].iter().copied().fold(T::neg_infinity(), T::max);
        (lo + hi) / T::of(2.0)
    }
}

fn threshold_mask<T: Scalar>(map: &ScalarMap<T>, bbox: PixelRect, above: bool) -> Result<Mask> {
    check_bbox(map, bbox)?;
    let med = region_median(map, bbox);
    Mask::from_fn(bbox.w, bbox.h, MaskFrame::Crop(bbox), |x, y| {
        let v = map.get(bbox.x + x, bbox.y + y);
        if above {
            v > med
        } else {
            v <= med
        }
    })
}

/// ENT-H: pixels strictly above the bbox's median entropy.
pub fn mask_ent_h<T: Scalar>(entropy: &ScalarMap<T>, bbox: PixelRect) -> Result<Mask> {
    threshold_mask(entropy, bbox, true)
}

/// ENT-L: pixels at or below the bbox's median entropy.
pub fn mask_ent_l<T: Scalar>(entropy: &ScalarMap<T>, bbox: PixelRect) -> Result<Mask> {
    threshold_mask(entropy, bbox, false)
}

/// SAL-H: pixels strictly above the bbox's median gradient magnitude.
pub fn mask_sal_h<T: Scalar>(saliency: &ScalarMap<T>, bbox: PixelRect) -> Result<Mask> {
    threshold_mask(saliency, bbox, true)
}

/// SAL-L: pixels at or below the bbox's median gradient magnitude.
pub fn mask_sal_l<T: Scalar>(saliency: &ScalarMap<T>, bbox: PixelRect) -> Result<Mask> {
    threshold_mask(saliency, bbox, false)
}

/// Candidate halves of `bbox` in tie-break order top, bottom, left, right.
/// Each half spans `ceil(side / 2)` along the split axis.
pub fn bbox_halves(bbox: PixelRect) -> [PixelRect; 4] {
    let hh = bbox.h.div_ceil(2);
    let hw = bbox.w.div_ceil(2);
    [
        PixelRect::new(bbox.x, bbox.y, bbox.w, hh),
        PixelRect::new(bbox.x, bbox.y2() - hh, bbox.w, hh),
        PixelRect::new(bbox.x, bbox.y, hw, bbox.h),
        PixelRect::new(bbox.x2() - hw, bbox.y, hw, bbox.h),
    ]
}

/// ADAPT: the axis-aligned half of the bbox with the highest mean entropy.
pub fn mask_adapt<T: Scalar>(entropy: &ScalarMap<T>, bbox: PixelRect) -> Result<Mask> {
    check_bbox(entropy, bbox)?;
    let halves = bbox_halves(bbox);
    let mut best = 0;
    let mut best_mean = T::neg_infinity();
    for (i, half) in halves.iter().enumerate() {
        let mean = entropy.region(*half).sum::<T>() / T::of(half.area() as f64);
        if mean > best_mean {
            best = i;
            best_mean = mean;
        }
    }
    let chosen = halves[best];
    let mut mask = Mask::empty_crop(bbox);
    mask.fill_rect(PixelRect::new(chosen.x - bbox.x, chosen.y - bbox.y, chosen.w, chosen.h), true);
    Ok(mask)
}

/// Parameters for object-preserving background masking.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpbgConfig {
    /// Target masked share of the background area.
    pub coverage: f64,
    /// Patch side range as a fraction of `min(W, H)`.
    pub patch_frac: (f64, f64),
    pub max_attempts: u32,
}

impl Default for OpbgConfig {
    fn default() -> Self {
        OpbgConfig { coverage: 0.25, patch_frac: (0.05, 0.15), max_attempts: 200 }
    }
}

impl OpbgConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.patch_frac;
        if !(self.coverage > 0.0 && self.coverage < 1.0) {
            return Err(Error::param(format!("OPBG coverage must be in (0,1), got {}", self.coverage)));
        }
        if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
            return Err(Error::param(format!("OPBG patch_frac must satisfy 0 < min <= max < 1, got {lo}..{hi}")));
        }
        Ok(())
    }

    /// Largest side a sampled patch can have in a `width x height` image.
    pub fn max_patch_side(&self, width: u32, height: u32) -> u32 {
        ((self.patch_frac.1 * width.min(height) as f64).round() as u32).clamp(1, width.min(height))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpbgMask {
    pub mask: Mask,
    pub target_reached: bool,
    pub attempts: u32,
    /// Pixels not covered by any annotation.
    pub background_area: u64,
}

/// OPBG: seeded union of background rectangles, none of which touches an
/// annotation bbox.
pub fn mask_opbg(width: u32, height: u32, boxes: &[PixelRect], cfg: &OpbgConfig, seed: u64) -> Result<OpbgMask> {
    cfg.validate()?;
    let mut occupied = Mask::empty_image(width, height);
    for b in boxes {
        occupied.fill_rect(*b, true);
    }
    let background_area = (width as u64 * height as u64) - occupied.count() as u64;
    let mut mask = Mask::empty_image(width, height);
    if background_area == 0 {
        log::warn!("OPBG: annotations cover the whole {width}x{height} image, nothing to mask");
        return Ok(OpbgMask { mask, target_reached: false, attempts: 0, background_area });
    }
    let target = (cfg.coverage * background_area as f64).ceil() as usize;
    let short = width.min(height) as f64;
    let side_lo = ((cfg.patch_frac.0 * short).round() as u32).max(1);
    let side_hi = cfg.max_patch_side(width, height).max(side_lo);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked = 0usize;
    let mut attempts = 0;
    while masked < target && attempts < cfg.max_attempts {
        attempts += 1;
        let pw = rng.random_range(side_lo..=side_hi).min(width);
        let ph = rng.random_range(side_lo..=side_hi).min(height);
        let x = rng.random_range(0..=width - pw);
        let y = rng.random_range(0..=height - ph);
        let patch = PixelRect::new(x, y, pw, ph);
        if boxes.iter().any(|b| b.intersects(&patch)) {
            continue;
        }
        for py in patch.y..patch.y2() {
            for px in patch.x..patch.x2() {
                if !mask.get(px, py) {
                    mask.set(px, py, true);
                    masked += 1;
                }
            }
        }
    }
    Ok(OpbgMask { mask, target_reached: masked >= target, attempts, background_area })
}

/// Ring margin for BORDER along a side of length `side`.
pub fn border_margin(side: u32, margin_frac: f64) -> u32 {
    ((margin_frac * side as f64).round() as u32).max(3)
}

/// BORDER: image-aligned ring around `bbox`, dilated by
/// `max(3, round(margin_frac * side))` per side and clipped to the image.
pub fn mask_border(bbox: PixelRect, width: u32, height: u32, margin_frac: f64) -> Result<Mask> {
    if bbox.w == 0 || bbox.h == 0 {
        return Err(Error::DegenerateBox { w: bbox.w as f64, h: bbox.h as f64, context: "BORDER" });
    }
    if margin_frac.is_nan() || margin_frac <= 0.0 {
        return Err(Error::param(format!("BORDER margin_frac must be > 0, got {margin_frac}")));
    }
    let mx = border_margin(bbox.w, margin_frac);
    let my = border_margin(bbox.h, margin_frac);
    let x0 = bbox.x.saturating_sub(mx);
    let y0 = bbox.y.saturating_sub(my);
    let x1 = (bbox.x2() + mx).min(width);
    let y1 = (bbox.y2() + my).min(height);
    let mut mask = Mask::empty_image(width, height);
    mask.fill_rect(PixelRect::new(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0)), true);
    mask.fill_rect(bbox, false);
    Ok(mask)
}

/// Area of the largest 4-connected component over the total masked area;
/// 1.0 for an empty mask.
pub fn contiguity_ratio(mask: &Mask) -> f64 {
    let total = mask.count();
    if total == 0 {
        return 1.0;
    }
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut seen = vec![false; w * h];
    let mut largest = 0usize;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.bits[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        largest = largest.max(size);
    }
    largest as f64 / total as f64
}
