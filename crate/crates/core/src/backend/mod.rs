//! Image generation backends: masked inpainting, edge-conditioned object
//! generation and edge extraction behind one trait, with a deterministic
//! in-process mock and an HTTP client for the diffusion service.

mod mock;
mod remote;
pub mod wire;

use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::EdgeMap;
use crate::error::{BackendError, Error, Result};
use crate::mask::Mask;

pub use mock::MockBackend;
pub use remote::{HealthStatus, RemoteBackend};

pub const DEFAULT_STEPS: u32 = 30;
pub const DEFAULT_GUIDANCE: f32 = 7.5;

#[derive(Clone, Debug, PartialEq)]
pub enum RequestKind {
    Inpaint { image: RgbImage, mask: Mask },
    EdgeConditioned { edge_map: EdgeMap<f32> },
}

/// One prompt-conditioned generation call. Carries its own seed so a retry
/// asks for the same image.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    pub kind: RequestKind,
    pub prompt: String,
    pub negative_prompt: String,
    pub seed: u64,
    pub steps: u32,
    pub guidance: f32,
}

impl GenerationRequest {
    pub fn inpaint(image: RgbImage, mask: Mask, prompt: impl Into<String>, negative: impl Into<String>, seed: u64) -> Self {
        GenerationRequest {
            kind: RequestKind::Inpaint { image, mask },
            prompt: prompt.into(),
            negative_prompt: negative.into(),
            seed,
            steps: DEFAULT_STEPS,
            guidance: DEFAULT_GUIDANCE,
        }
    }

    pub fn edge_conditioned(edge_map: EdgeMap<f32>, prompt: impl Into<String>, negative: impl Into<String>, seed: u64) -> Self {
        GenerationRequest {
            kind: RequestKind::EdgeConditioned { edge_map },
            prompt: prompt.into(),
            negative_prompt: negative.into(),
            seed,
            steps: DEFAULT_STEPS,
            guidance: DEFAULT_GUIDANCE,
        }
    }

    pub fn with_sampler(mut self, steps: u32, guidance: f32) -> Self {
        self.steps = steps;
        self.guidance = guidance;
        self
    }

    /// Output dimensions the backend must honour.
    pub fn dimensions(&self) -> (u32, u32) {
        match &self.kind {
            RequestKind::Inpaint { image, .. } => image.dimensions(),
            RequestKind::EdgeConditioned { edge_map } => (edge_map.width(), edge_map.height()),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        if let RequestKind::Inpaint { image, mask } = &self.kind {
            if image.dimensions() != (mask.width(), mask.height()) {
                return Err(BackendError::Dimensions {
                    expected: image.dimensions(),
                    actual: (mask.width(), mask.height()),
                });
            }
        }
        let (w, h) = self.dimensions();
        if w == 0 || h == 0 {
            return Err(BackendError::InvalidRequest("empty raster".into()));
        }
        Ok(())
    }

    /// Short content hash naming the request in logs and errors.
    pub fn identity(&self) -> String {
        let mut h = Sha256::new();
        match &self.kind {
            RequestKind::Inpaint { image, mask } => {
                h.update(b"inpaint");
                h.update(image.width().to_le_bytes());
                h.update(image.height().to_le_bytes());
                h.update(image.as_raw());
                h.update(mask.bits().iter().map(|&b| b as u8).collect::<Vec<_>>());
            }
            RequestKind::EdgeConditioned { edge_map } => {
                h.update(b"edge");
                h.update(edge_map.width().to_le_bytes());
                h.update(edge_map.height().to_le_bytes());
                for v in edge_map.values() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        h.update(self.prompt.as_bytes());
        h.update([0]);
        h.update(self.negative_prompt.as_bytes());
        h.update(self.seed.to_le_bytes());
        h.update(self.steps.to_le_bytes());
        h.update(self.guidance.to_le_bytes());
        let digest = h.finalize();
        format!("{}:{}", self.kind_name(), &hex::encode(digest)[..16])
    }

    fn kind_name(&self) -> &'static str {
        match self.kind {
            RequestKind::Inpaint { .. } => "inpaint",
            RequestKind::EdgeConditioned { .. } => "edge_conditioned",
        }
    }
}

#[derive(Clone, Debug)]
pub struct GenerationResult {
    pub image: RgbImage,
    pub backend_id: String,
    pub latency: Duration,
}

pub trait GenerationBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Regenerates the masked pixels of `req`'s image.
    fn inpaint(&self, req: &GenerationRequest) -> Result<GenerationResult>;

    /// Generates an image structurally aligned with `req`'s edge map.
    fn generate_from_edges(&self, req: &GenerationRequest) -> Result<GenerationResult>;

    fn extract_edges(&self, image: &RgbImage) -> Result<EdgeMap<f32>>;
}

pub(crate) fn backend_err(request: impl Into<String>, source: BackendError) -> Error {
    Error::Backend { request: request.into(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    /// First retry delay; doubles per attempt, with jitter.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

fn default_backoff_ms() -> u64 {
    500
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            timeout_ms: 120_000,
            max_retries: 3,
            max_in_flight: 1,
            backoff_base_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::param("remote timeout must be > 0"));
        }
        if self.max_in_flight == 0 {
            return Err(Error::param("max_in_flight must be >= 1"));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(Error::param(format!("backend url {:?} is not http(s)", self.base_url)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Mock,
    Remote(RemoteConfig),
}

impl BackendConfig {
    pub fn build(&self) -> Result<Box<dyn GenerationBackend>> {
        match self {
            BackendConfig::Mock => Ok(Box::new(MockBackend::new())),
            BackendConfig::Remote(cfg) => Ok(Box::new(RemoteBackend::new(cfg.clone())?)),
        }
    }
}
