//! JSON payloads exchanged with the diffusion service. Rasters travel as
//! base64-encoded PNG.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::analysis::EdgeMap;
use crate::error::BackendError;
use crate::io::{encode_png_gray, encode_png_rgb};
use crate::mask::Mask;

pub const INPAINT_PATH: &str = "/v1/inpaint";
pub const EDGE_CONDITIONED_PATH: &str = "/v1/generate_edge_conditioned";
pub const EDGE_MAP_PATH: &str = "/v1/edge_map";
pub const HEALTH_PATH: &str = "/health";

/// Largest payload the service accepts.
pub const MAX_PAYLOAD_BYTES: u64 = 16 * 1024 * 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintBody {
    pub image_b64: String,
    pub mask_b64: String,
    pub prompt: String,
    pub negative_prompt: String,
    pub seed: u64,
    pub steps: u32,
    pub guidance: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeConditionedBody {
    pub edge_map_b64: String,
    pub prompt: String,
    pub negative_prompt: String,
    pub seed: u64,
    pub steps: u32,
    pub guidance: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeMapBody {
    pub image_b64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    pub image_b64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeMapResponse {
    pub edge_map_b64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    #[serde(default)]
    pub models_loaded: serde_json::Value,
}

pub fn rgb_to_b64(img: &RgbImage) -> String {
    STANDARD.encode(encode_png_rgb(img))
}

pub fn gray_to_b64(img: &GrayImage) -> String {
    STANDARD.encode(encode_png_gray(img))
}

/// White (255) marks pixels to regenerate.
pub fn mask_to_b64(mask: &Mask) -> String {
    gray_to_b64(&mask.to_gray_image())
}

pub fn edge_map_to_b64(edges: &EdgeMap<f32>) -> String {
    gray_to_b64(&edges.to_gray_image())
}

fn decode_png(b64: &str) -> Result<image::DynamicImage, BackendError> {
    let bytes = STANDARD.decode(b64.trim()).map_err(|e| BackendError::Decode(format!("base64: {e}")))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| BackendError::Decode(format!("png: {e}")))
}

pub fn rgb_from_b64(b64: &str) -> Result<RgbImage, BackendError> {
    Ok(decode_png(b64)?.to_rgb8())
}

pub fn gray_from_b64(b64: &str) -> Result<GrayImage, BackendError> {
    Ok(decode_png(b64)?.to_luma8())
}

pub fn edge_map_from_b64(b64: &str) -> Result<EdgeMap<f32>, BackendError> {
    Ok(EdgeMap::from_gray_image(&gray_from_b64(b64)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn raster_round_trip() {
        let img = RgbImage::from_fn(7, 5, |x, y| Rgb([x as u8 * 30, y as u8 * 40, 7]));
        assert_eq!(rgb_from_b64(&rgb_to_b64(&img)).unwrap(), img);

        let mut mask = Mask::empty_image(7, 5);
        mask.set(3, 2, true);
        let back = Mask::from_gray_image(&gray_from_b64(&mask_to_b64(&mask)).unwrap());
        assert_eq!(back, mask);
    }

    #[test]
    fn garbage_payload_is_a_decode_error() {
        assert!(matches!(rgb_from_b64("%%%"), Err(BackendError::Decode(_))));
        assert!(matches!(rgb_from_b64("aGVsbG8="), Err(BackendError::Decode(_))));
    }

    #[test]
    fn inpaint_body_field_names() {
        let body = InpaintBody {
            image_b64: "i".into(),
            mask_b64: "m".into(),
            prompt: "p".into(),
            negative_prompt: "n".into(),
            seed: 1,
            steps: 30,
            guidance: 7.5,
        };
        let v = serde_json::to_value(&body).unwrap();
        for key in ["image_b64", "mask_b64", "prompt", "negative_prompt", "seed", "steps", "guidance"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
