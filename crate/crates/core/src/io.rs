//! Raster and file helpers.

use std::path::Path;

use image::{GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    Ok(img.to_rgb8())
}

pub fn encode_png_rgb(img: &RgbImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).expect("png encoding into memory");
    buf.into_inner()
}

pub fn encode_png_gray(img: &GrayImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).expect("png encoding into memory");
    buf.into_inner()
}

pub fn save_png_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    write_atomic(path, &encode_png_rgb(img))
}

pub fn save_png_gray(path: &Path, img: &GrayImage) -> Result<()> {
    write_atomic(path, &encode_png_gray(img))
}

/// Writes through a sibling temp file and renames, so readers never see a
/// half-written output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn gray_from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> u8) -> GrayImage {
    GrayImage::from_fn(width, height, |x, y| Luma([f(x, y)]))
}
