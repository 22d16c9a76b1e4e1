//! Remote client against an in-process fake of the diffusion service.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use artaug::analysis::EdgeMap;
use artaug::backend::wire::{self, EdgeConditionedBody, InpaintBody};
use artaug::backend::{GenerationBackend, GenerationRequest, RemoteBackend, RemoteConfig};
use artaug::mask::Mask;
use artaug::{BackendError, Error};
use image::{Rgb, RgbImage};
use serde_json::{json, Value};

struct Request {
    method: String,
    path: String,
    body: Value,
}

type Handler = dyn Fn(&Request, usize) -> (u16, String) + Send + Sync;

struct FakeService {
    url: String,
    calls: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> Option<Request> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    let body = if body.is_empty() { Value::Null } else { serde_json::from_slice(&body).ok()? };
    Some(Request { method, path, body })
}

fn serve(handler: Box<Handler>, delay: Duration) -> FakeService {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let calls = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let active = Arc::new(AtomicUsize::new(0));
    let handler: Arc<Handler> = Arc::from(handler);
    let (c, p) = (calls.clone(), peak.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (handler, calls, peak, active) = (handler.clone(), c.clone(), p.clone(), active.clone());
            thread::spawn(move || {
                let Some(req) = read_request(&mut stream) else { return };
                let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                let n = calls.fetch_add(1, Ordering::SeqCst);
                thread::sleep(delay);
                let (status, body) = handler(&req, n);
                active.fetch_sub(1, Ordering::SeqCst);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            });
        }
    });
    FakeService { url, calls, peak }
}

/// Echoes the input image back (inpaint) or paints a flat image of the
/// edge map's size (edge-conditioned), mimicking the real service contract.
fn well_behaved(req: &Request, _: usize) -> (u16, String) {
    match (req.method.as_str(), req.path.as_str()) {
        ("GET", wire::HEALTH_PATH) => (200, json!({"status": "ok", "models_loaded": {"inpaint": true}}).to_string()),
        ("POST", wire::INPAINT_PATH) => {
            let body: InpaintBody = serde_json::from_value(req.body.clone()).unwrap();
            let img = wire::rgb_from_b64(&body.image_b64).unwrap();
            let mask = wire::gray_from_b64(&body.mask_b64).unwrap();
            if mask.dimensions() != img.dimensions() {
                return (400, json!({"error": "mask size"}).to_string());
            }
            let out = RgbImage::from_fn(img.width(), img.height(), |x, y| {
                if mask.get_pixel(x, y)[0] == 255 { Rgb([(body.seed % 256) as u8, 0, 0]) } else { *img.get_pixel(x, y) }
            });
            (200, json!({"image_b64": wire::rgb_to_b64(&out)}).to_string())
        }
        ("POST", wire::EDGE_CONDITIONED_PATH) => {
            let body: EdgeConditionedBody = serde_json::from_value(req.body.clone()).unwrap();
            let e = wire::gray_from_b64(&body.edge_map_b64).unwrap();
            let out = RgbImage::from_pixel(e.width(), e.height(), Rgb([1, 2, 3]));
            (200, json!({"image_b64": wire::rgb_to_b64(&out)}).to_string())
        }
        ("POST", wire::EDGE_MAP_PATH) => {
            let img = wire::rgb_from_b64(req.body["image_b64"].as_str().unwrap()).unwrap();
            let e = image::GrayImage::from_fn(img.width(), img.height(), |x, _| image::Luma([if x % 2 == 0 { 255 } else { 0 }]));
            (200, json!({"edge_map_b64": wire::gray_to_b64(&e)}).to_string())
        }
        _ => (404, "{}".into()),
    }
}

fn client(url: &str) -> RemoteBackend {
    let mut cfg = RemoteConfig::new(url);
    cfg.backoff_base_ms = 1;
    cfg.max_retries = 2;
    cfg.timeout_ms = 2_000;
    RemoteBackend::new(cfg).unwrap()
}

fn inpaint_request(seed: u64) -> GenerationRequest {
    let img = RgbImage::from_fn(12, 8, |x, y| Rgb([x as u8, y as u8, 9]));
    let mut mask = Mask::empty_image(12, 8);
    mask.fill_rect(artaug::geometry::PixelRect::new(2, 2, 4, 3), true);
    GenerationRequest::inpaint(img, mask, "oil painting of rose on canvas", "bad anatomy, bad structure", seed)
}

fn backend_error(e: Error) -> BackendError {
    match e {
        Error::Backend { source, .. } => source,
        other => panic!("expected a backend error, got {other}"),
    }
}

#[test]
fn all_three_endpoints_round_trip() {
    let svc = serve(Box::new(well_behaved), Duration::ZERO);
    let be = client(&svc.url);
    let out = be.inpaint(&inpaint_request(77)).unwrap();
    assert_eq!(out.image.dimensions(), (12, 8));
    assert_eq!(out.image.get_pixel(3, 3), &Rgb([77, 0, 0]));
    assert_eq!(out.image.get_pixel(0, 0), &Rgb([0, 0, 9]));
    assert!(out.backend_id.starts_with("remote:"));

    let edges = be.extract_edges(&RgbImage::new(6, 4)).unwrap();
    assert_eq!((edges.width(), edges.height()), (6, 4));
    assert_eq!(edges.get(0, 0), 1.0);
    assert_eq!(edges.get(1, 0), 0.0);

    let req = GenerationRequest::edge_conditioned(edges, "oil painting of pipe on canvas", "", 1);
    assert_eq!(be.generate_from_edges(&req).unwrap().image.dimensions(), (6, 4));
    assert_eq!(svc.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn health_reports_models() {
    let svc = serve(Box::new(well_behaved), Duration::ZERO);
    let h = client(&svc.url).health().unwrap();
    assert!(h.healthy);
    assert_eq!(h.status, "ok");
    assert_eq!(h.models_loaded["inpaint"], true);

    let down = serve(Box::new(|_: &Request, _| (503, json!({"status": "loading"}).to_string())), Duration::ZERO);
    let h = client(&down.url).health().unwrap();
    assert!(!h.healthy);
    assert_eq!(h.status, "loading");
}

#[test]
fn server_errors_are_retried_then_succeed() {
    let svc = serve(
        Box::new(|req: &Request, n| if n < 2 { (503, "{}".into()) } else { well_behaved(req, n) }),
        Duration::ZERO,
    );
    let out = client(&svc.url).inpaint(&inpaint_request(5)).unwrap();
    assert_eq!(out.image.dimensions(), (12, 8));
    assert_eq!(svc.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_exhaust_on_persistent_5xx() {
    let svc = serve(Box::new(|_: &Request, _| (500, "boom".into())), Duration::ZERO);
    let err = backend_error(client(&svc.url).inpaint(&inpaint_request(5)).unwrap_err());
    assert!(matches!(err, BackendError::Status { status: 500, attempts: 3, .. }), "{err:?}");
    assert_eq!(svc.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let svc = serve(Box::new(|_: &Request, _| (400, json!({"error": "mask size"}).to_string())), Duration::ZERO);
    let err = backend_error(client(&svc.url).inpaint(&inpaint_request(5)).unwrap_err());
    assert!(matches!(err, BackendError::Status { status: 400, attempts: 1, .. }), "{err:?}");
    assert_eq!(svc.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn wrong_output_size_is_rejected() {
    let svc = serve(
        Box::new(|_: &Request, _| (200, json!({"image_b64": wire::rgb_to_b64(&RgbImage::new(3, 3))}).to_string())),
        Duration::ZERO,
    );
    let err = backend_error(client(&svc.url).inpaint(&inpaint_request(5)).unwrap_err());
    assert!(matches!(err, BackendError::Dimensions { expected: (12, 8), actual: (3, 3) }), "{err:?}");
}

#[test]
fn undecodable_payload_is_a_decode_error() {
    let svc = serve(Box::new(|_: &Request, _| (200, json!({"image_b64": "@@@"}).to_string())), Duration::ZERO);
    let err = backend_error(client(&svc.url).inpaint(&inpaint_request(5)).unwrap_err());
    assert!(matches!(err, BackendError::Decode(_)), "{err:?}");
}

#[test]
fn invalid_requests_never_reach_the_server() {
    let svc = serve(Box::new(well_behaved), Duration::ZERO);
    let img = RgbImage::new(4, 4);
    let req = GenerationRequest::inpaint(img, Mask::empty_image(5, 4), "p", "", 1);
    let err = backend_error(client(&svc.url).inpaint(&req).unwrap_err());
    assert!(matches!(err, BackendError::Dimensions { expected: (4, 4), actual: (5, 4) }), "{err:?}");
    assert_eq!(svc.calls.load(Ordering::SeqCst), 0);
}

#[test]
fn unreachable_service_fails_after_retries() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = backend_error(client(&format!("http://127.0.0.1:{port}")).inpaint(&inpaint_request(1)).unwrap_err());
    assert!(matches!(err, BackendError::Connection { attempts: 3, .. } | BackendError::Timeout { attempts: 3 }), "{err:?}");
}

#[test]
fn timeouts_are_reported() {
    let svc = serve(Box::new(well_behaved), Duration::from_millis(400));
    let mut cfg = RemoteConfig::new(&svc.url);
    cfg.timeout_ms = 50;
    cfg.max_retries = 0;
    let err = backend_error(RemoteBackend::new(cfg).unwrap().inpaint(&inpaint_request(1)).unwrap_err());
    assert!(matches!(err, BackendError::Timeout { attempts: 1 }), "{err:?}");
}

#[test]
fn in_flight_cap_is_respected() {
    let svc = serve(Box::new(well_behaved), Duration::from_millis(30));
    let mut cfg = RemoteConfig::new(&svc.url);
    cfg.max_in_flight = 2;
    let be = Arc::new(RemoteBackend::new(cfg).unwrap());
    let handles: Vec<_> = (0..6)
        .map(|i| {
            let be = be.clone();
            thread::spawn(move || be.inpaint(&inpaint_request(i)).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(svc.calls.load(Ordering::SeqCst), 6);
    assert!(svc.peak.load(Ordering::SeqCst) <= 2);
}

#[test]
fn edge_map_values_stay_in_unit_range() {
    let svc = serve(Box::new(well_behaved), Duration::ZERO);
    let edges: EdgeMap<f32> = client(&svc.url).extract_edges(&RgbImage::new(9, 9)).unwrap();
    assert!(edges.values().iter().all(|v| (0.0..=1.0).contains(v)));
}
