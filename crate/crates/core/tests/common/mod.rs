#![allow(dead_code)]

use std::path::Path;

use artaug::dataset::{Annotation, Category, Dataset, ImageRecord, Provenance};
use artaug::geometry::BBox;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLASSES: [&str; 3] = ["rose", "lobster", "pipe"];

/// Synthetic painting-ish image: smooth gradient background, a few
/// textured rectangles.
pub fn painting(width: u32, height: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [u8; 3] = [rng.random_range(40..200), rng.random_range(40..200), rng.random_range(40..200)];
    let mut img = RgbImage::from_fn(width, height, |x, y| {
        let t = (x + y) as f32 / (width + height) as f32;
        Rgb(base.map(|c| (c as f32 * (0.6 + 0.4 * t)) as u8))
    });
    for _ in 0..3 {
        let w = rng.random_range(4..width / 2);
        let h = rng.random_range(4..height / 2);
        let x0 = rng.random_range(0..width - w);
        let y0 = rng.random_range(0..height - h);
        let c: [u8; 3] = [rng.random(), rng.random(), rng.random()];
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let v = if (x * 7 + y * 3) % 5 == 0 { 30 } else { 0 };
                img.put_pixel(x, y, Rgb(c.map(|k| k.saturating_sub(v))));
            }
        }
    }
    img
}

/// `n` images with 1..=3 boxes each, written as PNGs into `dir`.
pub fn fixture(dir: &Path, n: u64, width: u32, height: u32, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut next_ann = 1;
    for id in 1..=n {
        let file_name = format!("img_{id:03}.png");
        painting(width, height, seed ^ id).save(dir.join(&file_name)).unwrap();
        images.push(ImageRecord { id, file_name, width, height });
        for _ in 0..rng.random_range(1..=3) {
            let w = rng.random_range(6..width / 2) as f64 + 0.5;
            let h = rng.random_range(6..height / 2) as f64;
            let x = rng.random_range(0.0..width as f64 - w);
            let y = rng.random_range(0.0..height as f64 - h);
            annotations.push(Annotation {
                id: next_ann,
                image_id: id,
                category_id: rng.random_range(1..=3),
                bbox: BBox::new(x, y, w, h),
                provenance: Provenance::Real,
            });
            next_ann += 1;
        }
    }
    let categories = CLASSES.iter().enumerate().map(|(i, n)| Category { id: i as u64 + 1, name: n.to_string() }).collect();
    Dataset::new(images, annotations, categories).unwrap()
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
