//! Blocking HTTP client for the diffusion service.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use image::RgbImage;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{self, EdgeConditionedBody, EdgeMapBody, EdgeMapResponse, HealthResponse, ImageResponse, InpaintBody};
use super::{backend_err, GenerationBackend, GenerationRequest, GenerationResult, RemoteConfig, RequestKind};
use crate::analysis::EdgeMap;
use crate::error::{BackendError, Result};

/// Counting semaphore capping simultaneous requests.
struct InFlight {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(n: usize) -> Self {
        InFlight { available: Mutex::new(n), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("in-flight lock poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("in-flight lock poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("in-flight lock poisoned") += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HealthStatus {
    pub healthy: bool,
    pub status: String,
    pub models_loaded: serde_json::Value,
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
    id: String,
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let id = format!("remote:{}", cfg.base_url.trim_end_matches('/'));
        Ok(RemoteBackend { in_flight: InFlight::new(cfg.max_in_flight), agent, cfg, id })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.cfg.backoff_base_ms as f64 * 2f64.powi(attempt as i32);
        let jitter = rand::rng().random_range(0.0..0.25);
        Duration::from_millis((base * (1.0 + jitter)) as u64)
    }

    fn classify(err: ureq::Error, attempts: u32) -> Attempt {
        match err {
            ureq::Error::Timeout(_) => Attempt::Retry(BackendError::Timeout { attempts }),
            ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => {
                Attempt::Retry(BackendError::Timeout { attempts })
            }
            ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
                Attempt::Retry(BackendError::Connection { attempts, message: err.to_string() })
            }
            other => Attempt::Fatal(BackendError::Connection { attempts, message: other.to_string() }),
        }
    }

    fn attempt<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B, attempts: u32) -> Result<R, Attempt> {
        let _permit = self.in_flight.acquire();
        let mut resp = self.agent.post(&self.url(path)).send_json(body).map_err(|e| Self::classify(e, attempts))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            let err = BackendError::Status { status, attempts, body };
            return Err(if status >= 500 { Attempt::Retry(err) } else { Attempt::Fatal(err) });
        }
        resp.body_mut()
            .with_config()
            .limit(wire::MAX_PAYLOAD_BYTES * 2)
            .read_json::<R>()
            .map_err(|e| Attempt::Fatal(BackendError::Decode(e.to_string())))
    }

    /// POSTs `body`, retrying transport failures and 5xx responses with
    /// exponential backoff. 4xx responses fail immediately.
    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let mut attempt = 0;
        loop {
            match self.attempt(path, body, attempt + 1) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt >= self.cfg.max_retries => return Err(e),
                Err(Attempt::Retry(e)) => {
                    let delay = self.backoff(attempt);
                    log::warn!("{path}: {e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }

    pub fn health(&self) -> Result<HealthStatus, BackendError> {
        let mut resp = self
            .agent
            .get(&self.url(wire::HEALTH_PATH))
            .call()
            .map_err(|e| BackendError::Connection { attempts: 1, message: e.to_string() })?;
        let status = resp.status().as_u16();
        let parsed: Option<HealthResponse> = resp.body_mut().read_json().ok();
        Ok(HealthStatus {
            healthy: status == 200,
            status: parsed.as_ref().map_or_else(|| format!("http {status}"), |h| h.status.clone()),
            models_loaded: parsed.map(|h| h.models_loaded).unwrap_or_default(),
        })
    }

    fn check_dims(expected: (u32, u32), image: &RgbImage) -> Result<(), BackendError> {
        if image.dimensions() != expected {
            return Err(BackendError::Dimensions { expected, actual: image.dimensions() });
        }
        Ok(())
    }
}

impl GenerationBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn inpaint(&self, req: &GenerationRequest) -> Result<GenerationResult> {
        let started = Instant::now();
        let identity = req.identity();
        req.validate().map_err(|e| backend_err(&identity, e))?;
        let RequestKind::Inpaint { image, mask } = &req.kind else {
            return Err(backend_err(identity, BackendError::InvalidRequest("expected an inpaint request".into())));
        };
        let body = InpaintBody {
            image_b64: wire::rgb_to_b64(image),
            mask_b64: wire::mask_to_b64(mask),
            prompt: req.prompt.clone(),
            negative_prompt: req.negative_prompt.clone(),
            seed: req.seed,
            steps: req.steps,
            guidance: req.guidance,
        };
        let run = || -> Result<RgbImage, BackendError> {
            let resp: ImageResponse = self.post(wire::INPAINT_PATH, &body)?;
            let out = wire::rgb_from_b64(&resp.image_b64)?;
            Self::check_dims(image.dimensions(), &out)?;
            Ok(out)
        };
        let out = run().map_err(|e| backend_err(&identity, e))?;
        Ok(GenerationResult { image: out, backend_id: self.id.clone(), latency: started.elapsed() })
    }

    fn generate_from_edges(&self, req: &GenerationRequest) -> Result<GenerationResult> {
        let started = Instant::now();
        let identity = req.identity();
        req.validate().map_err(|e| backend_err(&identity, e))?;
        let RequestKind::EdgeConditioned { edge_map } = &req.kind else {
            return Err(backend_err(identity, BackendError::InvalidRequest("expected an edge-conditioned request".into())));
        };
        let body = EdgeConditionedBody {
            edge_map_b64: wire::edge_map_to_b64(edge_map),
            prompt: req.prompt.clone(),
            negative_prompt: req.negative_prompt.clone(),
            seed: req.seed,
            steps: req.steps,
            guidance: req.guidance,
        };
        let run = || -> Result<RgbImage, BackendError> {
            let resp: ImageResponse = self.post(wire::EDGE_CONDITIONED_PATH, &body)?;
            let out = wire::rgb_from_b64(&resp.image_b64)?;
            Self::check_dims((edge_map.width(), edge_map.height()), &out)?;
            Ok(out)
        };
        let out = run().map_err(|e| backend_err(&identity, e))?;
        Ok(GenerationResult { image: out, backend_id: self.id.clone(), latency: started.elapsed() })
    }

    fn extract_edges(&self, image: &RgbImage) -> Result<EdgeMap<f32>> {
        let identity = format!("edge_map:{}x{}", image.width(), image.height());
        let body = EdgeMapBody { image_b64: wire::rgb_to_b64(image) };
        let run = || -> Result<EdgeMap<f32>, BackendError> {
            let resp: EdgeMapResponse = self.post(wire::EDGE_MAP_PATH, &body)?;
            let edges = wire::edge_map_from_b64(&resp.edge_map_b64)?;
            if (edges.width(), edges.height()) != image.dimensions() {
                return Err(BackendError::Dimensions {
                    expected: image.dimensions(),
                    actual: (edges.width(), edges.height()),
                });
            }
            Ok(edges)
        };
        run().map_err(|e| backend_err(identity, e))
    }
}
