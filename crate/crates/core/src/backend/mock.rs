//! Deterministic CPU stand-in for the diffusion service.
//!
//! Textures come from integer-hashed value noise evaluated with plain f32
//! arithmetic (no transcendentals), so outputs are bit-reproducible across
//! platforms.

use std::time::Instant;

use image::{Rgb, RgbImage};

use super::{backend_err, GenerationBackend, GenerationRequest, GenerationResult, RequestKind};
use crate::analysis::{default_edges, to_grayscale, EdgeMap};
use crate::error::{BackendError, Result};

const INPAINT_AMPLITUDE: f32 = 120.0;
const EDGE_TEXTURE_AMPLITUDE: f32 = 24.0;
const RIDGE_GAIN: f32 = 110.0;

#[derive(Clone, Debug, Default)]
pub struct MockBackend;

impl MockBackend {
    pub fn new() -> Self {
        MockBackend
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64, channel: u32) -> f32 {
    let h = splitmix(seed ^ splitmix((ix as u64) ^ splitmix((iy as u64) ^ splitmix(channel as u64))));
    (h >> 40) as f32 / (1u32 << 24) as f32
}

fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise with smoothstep easing, in [0, 1).
fn value_noise(seed: u64, x: u32, y: u32, channel: u32, cell: u32) -> f32 {
    let (ix, iy) = ((x / cell) as i64, (y / cell) as i64);
    let tx = smooth((x % cell) as f32 / cell as f32);
    let ty = smooth((y % cell) as f32 / cell as f32);
    let a = lattice(seed, ix, iy, channel);
    let b = lattice(seed, ix + 1, iy, channel);
    let c = lattice(seed, ix, iy + 1, channel);
    let d = lattice(seed, ix + 1, iy + 1, channel);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

fn fractal_noise(seed: u64, x: u32, y: u32, channel: u32) -> f32 {
    0.5 * value_noise(seed, x, y, channel, 32)
        + 0.3 * value_noise(seed ^ 0xA5A5, x, y, channel, 11)
        + 0.2 * value_noise(seed ^ 0x5A5A, x, y, channel, 4)
}

fn text_hash(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3))
}

/// Prompt-dependent mid-tone colour.
fn palette(prompt: &str) -> [f32; 3] {
    let h = splitmix(text_hash(prompt));
    [0, 1, 2].map(|i| 64.0 + ((h >> (i * 16)) & 0x7F) as f32)
}

fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

impl MockBackend {
    fn inpaint_image(&self, image: &RgbImage, mask: &crate::mask::Mask, req: &GenerationRequest) -> RgbImage {
        let (w, h) = image.dimensions();
        let mut sums = [0u64; 3];
        let mut kept = 0u64;
        for (x, y, p) in image.enumerate_pixels() {
            if !mask.get(x, y) {
                for c in 0..3 {
                    sums[c] += p[c] as u64;
                }
                kept += 1;
            }
        }
        let tint = if kept > 0 {
            sums.map(|s| s as f32 / kept as f32)
        } else {
            palette(&req.prompt)
        };
        let mut out = image.clone();
        for y in 0..h {
            for x in 0..w {
                if mask.get(x, y) {
                    let px = [0, 1, 2].map(|c| {
                        let n = fractal_noise(req.seed, x, y, c as u32);
                        to_u8(tint[c] + (n - 0.5) * INPAINT_AMPLITUDE)
                    });
                    out.put_pixel(x, y, Rgb(px));
                }
            }
        }
        out
    }

    fn edge_image(&self, edges: &EdgeMap<f32>, req: &GenerationRequest) -> RgbImage {
        let (w, h) = (edges.width(), edges.height());
        let base = palette(&req.prompt);
        let e = |x: i64, y: i64| -> f32 {
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                0.0
            } else {
                edges.get(x as u32, y as u32)
            }
        };
        const K: [f32; 3] = [0.25, 0.5, 0.25];
        RgbImage::from_fn(w, h, |x, y| {
            let mut ridge = 0.0f32;
            for (j, ky) in K.iter().enumerate() {
                for (i, kx) in K.iter().enumerate() {
                    ridge += kx * ky * e(x as i64 + i as i64 - 1, y as i64 + j as i64 - 1);
                }
            }
            Rgb([0, 1, 2].map(|c| {
                let n = value_noise(req.seed, x, y, c as u32, 16);
                to_u8(base[c] + (n - 0.5) * EDGE_TEXTURE_AMPLITUDE - RIDGE_GAIN * ridge)
            }))
        })
    }
}

impl GenerationBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn inpaint(&self, req: &GenerationRequest) -> Result<GenerationResult> {
        let started = Instant::now();
        req.validate().map_err(|e| backend_err(req.identity(), e))?;
        let RequestKind::Inpaint { image, mask } = &req.kind else {
            return Err(backend_err(req.identity(), BackendError::InvalidRequest("expected an inpaint request".into())));
        };
        Ok(GenerationResult {
            image: self.inpaint_image(image, mask, req),
            backend_id: self.id().into(),
            latency: started.elapsed(),
        })
    }

    fn generate_from_edges(&self, req: &GenerationRequest) -> Result<GenerationResult> {
        let started = Instant::now();
        req.validate().map_err(|e| backend_err(req.identity(), e))?;
        let RequestKind::EdgeConditioned { edge_map } = &req.kind else {
            return Err(backend_err(
                req.identity(),
                BackendError::InvalidRequest("expected an edge-conditioned request".into()),
            ));
        };
        Ok(GenerationResult {
            image: self.edge_image(edge_map, req),
            backend_id: self.id().into(),
            latency: started.elapsed(),
        })
    }

    fn extract_edges(&self, image: &RgbImage) -> Result<EdgeMap<f32>> {
        default_edges(&to_grayscale(image))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PixelRect;
    use crate::mask::Mask;

    fn noise_image(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = splitmix((x as u64) << 32 | y as u64);
            Rgb([v as u8, (v >> 8) as u8, (v >> 16) as u8])
        })
    }

    #[test]
    fn empty_mask_is_identity() {
        let img = noise_image(20, 16);
        let req = GenerationRequest::inpaint(img.clone(), Mask::empty_image(20, 16), "p", "n", 1);
        assert_eq!(MockBackend.inpaint(&req).unwrap().image, img);
    }

    #[test]
    fn full_mask_determinism() {
        let img = noise_image(24, 24);
        let run = |seed| {
            let req = GenerationRequest::inpaint(img.clone(), Mask::full_image(24, 24), "p", "n", seed);
            MockBackend.inpaint(&req).unwrap().image
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn half_mask_changes_only_masked_half() {
        let img = noise_image(40, 20);
        let mut mask = Mask::empty_image(40, 20);
        mask.fill_rect(PixelRect::new(0, 0, 20, 20), true);
        let out = MockBackend.inpaint(&GenerationRequest::inpaint(img.clone(), mask, "p", "n", 9)).unwrap().image;
        let mut changed = 0;
        for (x, y, p) in out.enumerate_pixels() {
            if x >= 20 {
                assert_eq!(p, img.get_pixel(x, y));
            } else if p != img.get_pixel(x, y) {
                changed += 1;
            }
        }
        assert!(changed as f64 >= 0.01 * 400.0, "{changed}");
    }

    #[test]
    fn mismatched_mask_and_empty_prompt_rejected() {
        let img = noise_image(8, 8);
        let bad = GenerationRequest::inpaint(img.clone(), Mask::empty_image(8, 7), "p", "n", 0);
        assert!(MockBackend.inpaint(&bad).unwrap_err().is_backend());
        let bad = GenerationRequest::inpaint(img, Mask::empty_image(8, 8), "  ", "n", 0);
        assert!(MockBackend.inpaint(&bad).is_err());
    }

    #[test]
    fn wrong_kind_rejected() {
        let edges = EdgeMap::new(4, 4, vec![0.0; 16]).unwrap();
        let req = GenerationRequest::edge_conditioned(edges, "p", "n", 0);
        assert!(MockBackend.inpaint(&req).is_err());
        assert!(MockBackend.generate_from_edges(&req).is_ok());
    }

    #[test]
    fn zero_edges_give_flat_texture() {
        let edges = EdgeMap::new(32, 32, vec![0.0; 32 * 32]).unwrap();
        let out = MockBackend
            .generate_from_edges(&GenerationRequest::edge_conditioned(edges, "oil painting of rose on canvas", "n", 3))
            .unwrap()
            .image;
        let base = palette("oil painting of rose on canvas");
        for p in out.pixels() {
            for c in 0..3 {
                assert!((p[c] as f32 - base[c]).abs() <= EDGE_TEXTURE_AMPLITUDE / 2.0 + 0.5);
            }
        }
    }

    #[test]
    fn edge_line_becomes_ridge() {
        let (w, h) = (33u32, 24u32);
        let values = (0..h).flat_map(|_| (0..w).map(|x| if x == 16 { 1.0 } else { 0.0 })).collect();
        let edges = EdgeMap::new(w, h, values).unwrap();
        let out = MockBackend.generate_from_edges(&GenerationRequest::edge_conditioned(edges, "p", "n", 4)).unwrap().image;
        for y in 0..h {
            for c in 0..3 {
                let v = |x| out.get_pixel(x, y)[c] as i32;
                assert!(v(16) < v(15) && v(16) < v(17), "row {y} channel {c}");
            }
        }
    }

    #[test]
    fn extract_edges_delegates_to_classical() {
        let img = RgbImage::from_fn(20, 10, |x, _| if x < 10 { Rgb([0, 0, 0]) } else { Rgb([250, 250, 250]) });
        let expected = default_edges::<f32>(&to_grayscale(&img)).unwrap();
        assert_eq!(MockBackend.extract_edges(&img).unwrap(), expected);
        let flat = RgbImage::from_pixel(10, 10, Rgb([9, 9, 9]));
        assert!(MockBackend.extract_edges(&flat).unwrap().values().iter().all(|&v| v == 0.0));
    }
}
